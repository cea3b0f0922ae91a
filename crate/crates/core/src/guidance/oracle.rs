use std::collections::BTreeMap;

use super::{
    Capabilities, GuidanceError, GuidanceProvider, GuidanceRequest, GuidanceResponse, GuidanceSpace,
    PROTOCOL,
};
use crate::diffusion::{l2_reparam_gradient, NoiseSchedule, SdsWeights};
use crate::image::Image;

/// Treats the stored target view of the requested camera as the one-step
/// denoised image, so training reduces to multi-view L2 reconstruction.
#[derive(Debug, Clone)]
pub struct OracleProvider {
    targets: BTreeMap<u32, Image>,
    schedule: NoiseSchedule,
    weights: SdsWeights,
}

impl OracleProvider {
    pub fn new(targets: BTreeMap<u32, Image>, schedule: NoiseSchedule, weights: SdsWeights) -> Self {
        Self {
            targets,
            schedule,
            weights,
        }
    }

    pub fn target(&self, view_id: u32) -> Option<&Image> {
        self.targets.get(&view_id)
    }

    pub fn view_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.targets.keys().copied()
    }
}

impl GuidanceProvider for OracleProvider {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        request.validate()?;
        let id = request
            .view_id
            .ok_or_else(|| GuidanceError::InvalidRequest("oracle requests need a view id".into()))?;
        let target = self
            .targets
            .get(&id)
            .ok_or_else(|| GuidanceError::InvalidRequest(format!("unknown camera id {id}")))?;
        let x = &request.image;
        if !x.same_shape(target) {
            return Err(GuidanceError::ShapeMismatch {
                expected: (target.height, target.width),
                found: (x.height, x.width),
            });
        }
        let level = self.schedule.level_at_fraction(request.noise_fraction);
        let grad = l2_reparam_gradient(&x.data, &target.data, level, self.weights)
            .map_err(|e| GuidanceError::InvalidRequest(e.to_string()))?;
        Ok(GuidanceResponse {
            grad_image: Image::from_data(x.width, x.height, grad).expect("gradient matches image"),
            x_hat_preview: Some(target.clamped()),
        })
    }

    fn capabilities(&self) -> Capabilities {
        let mut resolution: Vec<usize> = self
            .targets
            .values()
            .filter(|t| t.width == t.height)
            .map(|t| t.width)
            .collect();
        resolution.sort_unstable();
        resolution.dedup();
        Capabilities {
            protocol: PROTOCOL.into(),
            space: vec![GuidanceSpace::Image, GuidanceSpace::Latent],
            resolution,
            preview: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::NoiseLevel;

    fn request(image: Image, u: f64, view: Option<u32>) -> GuidanceRequest {
        GuidanceRequest {
            image,
            noise_fraction: u,
            seed: 0,
            prompt: String::new(),
            guidance_scale: 1.0,
            space: GuidanceSpace::Image,
            view_id: view,
        }
    }

    fn provider(target: Image) -> OracleProvider {
        OracleProvider::new(
            BTreeMap::from([(3, target)]),
            NoiseSchedule::default(),
            SdsWeights::ConstantOne,
        )
    }

    #[test]
    fn converged_input_gives_zero_gradient() {
        let target = Image::filled(4, 4, [0.2, 0.7, 0.1]);
        let p = provider(target.clone());
        for u in [0.02, 0.5, 0.98] {
            let r = p.guide(&request(target.clone(), u, Some(3))).unwrap();
            assert!(r.grad_image.data.iter().all(|v| v.abs() < 1e-6));
            assert_eq!(r.x_hat_preview.unwrap(), target);
        }
    }

    #[test]
    fn white_target_black_render_at_half_alpha_bar() {
        let s = NoiseSchedule::default();
        let u = (1..=1000)
            .map(|t| (t, (s.alpha_bar(t).unwrap() - 0.5).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0 as f64
            / 1000.0;
        let level = s.level_at_fraction(u);
        let p = provider(Image::filled(2, 2, [1.0; 3]));
        let r = p.guide(&request(Image::new(2, 2), u, Some(3))).unwrap();
        let beta = SdsWeights::ConstantOne.l2_scale(level).unwrap();
        for v in &r.grad_image.data {
            assert!((v + beta).abs() < 1e-15);
        }
        // Exactly at ᾱ = 0.5 the scale is one.
        let exact = SdsWeights::ConstantOne.l2_scale(NoiseLevel::from_alpha_bar(0.5)).unwrap();
        assert!((exact - 1.0).abs() < 1e-15);
        assert!((beta - 1.0).abs() < 0.01);
    }

    #[test]
    fn gradient_is_linear_in_residual() {
        let target = Image::filled(3, 2, [0.5; 3]);
        let p = provider(target);
        let a = p.guide(&request(Image::filled(3, 2, [0.6; 3]), 0.4, Some(3))).unwrap();
        let b = p.guide(&request(Image::filled(3, 2, [0.7; 3]), 0.4, Some(3))).unwrap();
        for (x, y) in a.grad_image.data.iter().zip(&b.grad_image.data) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn request_errors() {
        let p = provider(Image::new(4, 4));
        assert!(matches!(
            p.guide(&request(Image::new(4, 4), 0.5, None)),
            Err(GuidanceError::InvalidRequest(_))
        ));
        assert!(matches!(
            p.guide(&request(Image::new(4, 4), 0.5, Some(9))),
            Err(GuidanceError::InvalidRequest(_))
        ));
        assert!(matches!(
            p.guide(&request(Image::new(5, 4), 0.5, Some(3))),
            Err(GuidanceError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            p.guide(&request(Image::new(4, 4), 1.0, Some(3))),
            Err(GuidanceError::InvalidRequest(_))
        ));
    }
}
