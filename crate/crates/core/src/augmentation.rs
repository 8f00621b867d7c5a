//! Hand visibility simulation.
//!
//! Spatial: a wrist is visible when its yaw/pitch in head coordinates falls
//! inside a generalized ellipse `|(ψx-φx)/γx|^p + |(ψy-φy)/γy|^p ≤ 1`.
//! Temporal: short and long burst drops, each a Poisson number of events with
//! log-normal durations, unioned together.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::str::FromStr;
use thiserror::Error;

use crate::conditioning::HandObservation;
use crate::geometry::RigidTransform;

const MAX_FOV_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentationError {
    #[error("wrist is at the head origin (distance {distance:e} m)")]
    DegeneratePosition { distance: f64 },
    #[error("field-of-view rejection sampler gave up after {attempts} attempts")]
    ResamplingExhausted { attempts: usize },
    #[error("invalid field of view: {0}")]
    InvalidFov(String),
    #[error("unknown field-of-view preset '{0}'")]
    UnknownPreset(String),
}

/// Generalized-ellipse field of view, angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovSpec {
    pub center_x: f64,
    pub center_y: f64,
    pub half_x: f64,
    pub half_y: f64,
    pub power: f64,
}

impl FovSpec {
    pub fn new(
        center_x: f64,
        center_y: f64,
        half_x: f64,
        half_y: f64,
        power: f64,
    ) -> Result<Self, AugmentationError> {
        if !(half_x > 0.0 && half_y > 0.0) {
            return Err(AugmentationError::InvalidFov(format!(
                "half-angles must be positive, got ({half_x}, {half_y})"
            )));
        }
        if !(power >= 1.0) {
            return Err(AugmentationError::InvalidFov(format!("power must be ≥ 1, got {power}")));
        }
        Ok(Self {
            center_x,
            center_y,
            half_x,
            half_y,
            power,
        })
    }

    /// Square, forward-looking field of view approximating a pinhole camera.
    pub fn pinhole(half_angle: f64) -> Self {
        Self {
            center_x: 0.0,
            center_y: 0.0,
            half_x: half_angle,
            half_y: half_angle,
            power: 8.0,
        }
    }

    /// Left-hand side of the generalized ellipse test.
    pub fn level(&self, yaw: f64, pitch: f64) -> f64 {
        let u = ((yaw - self.center_x) / self.half_x).abs();
        let v = ((pitch - self.center_y) / self.half_y).abs();
        u.powf(self.power) + v.powf(self.power)
    }
}

/// Fixed or sampled field of view used when augmenting a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FovPreset {
    Pinhole90,
    Pinhole180,
    Random,
}

impl FovPreset {
    pub fn resolve<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<FovSpec, AugmentationError> {
        match self {
            FovPreset::Pinhole90 => Ok(FovSpec::pinhole(FRAC_PI_4)),
            FovPreset::Pinhole180 => Ok(FovSpec::pinhole(FRAC_PI_2)),
            FovPreset::Random => sample_fov(rng),
        }
    }
}

impl FromStr for FovPreset {
    type Err = AugmentationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pinhole90" => Ok(FovPreset::Pinhole90),
            "pinhole180" => Ok(FovPreset::Pinhole180),
            "random" => Ok(FovPreset::Random),
            other => Err(AugmentationError::UnknownPreset(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropMode {
    Short,
    Long,
}

impl DropMode {
    fn max_ratio(&self) -> f64 {
        match self {
            DropMode::Short => 0.10,
            DropMode::Long => 0.20,
        }
    }
}

/// Parameters of one temporal drop process. `mean` and `std` describe the
/// event duration itself in frames, not the underlying normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropSpec {
    pub mode: DropMode,
    pub ratio: f64,
    pub mean: f64,
    pub std: f64,
    pub min_duration: usize,
}

impl DropSpec {
    /// Motion-blur style transients.
    pub fn short(ratio: f64) -> Self {
        Self {
            mode: DropMode::Short,
            ratio,
            mean: 2.0,
            std: 1.0,
            min_duration: 1,
        }
    }

    /// Occlusion style drops, never shorter than 5 frames.
    pub fn long(ratio: f64) -> Self {
        Self {
            mode: DropMode::Long,
            ratio,
            mean: 28.0,
            std: 25.0,
            min_duration: 5,
        }
    }

    /// Draws the target ratio uniformly from the mode's range.
    pub fn sample<R: Rng + ?Sized>(mode: DropMode, rng: &mut R) -> Self {
        let ratio = rng.random_range(0.0..=mode.max_ratio());
        match mode {
            DropMode::Short => Self::short(ratio),
            DropMode::Long => Self::long(ratio),
        }
    }

    /// Expected event count `T·ρ / E[D]` for a sequence of `frames`.
    pub fn poisson_rate(&self, frames: usize) -> f64 {
        frames as f64 * self.ratio / self.mean
    }

    /// `(μ, σ)` of the normal whose exponential has this mean and std.
    pub fn lognormal_params(&self) -> (f64, f64) {
        let m2 = self.mean * self.mean;
        let s2 = self.std * self.std;
        let mu = (m2 / (m2 + s2).sqrt()).ln();
        let sigma = (1.0 + s2 / m2).ln().sqrt();
        (mu, sigma)
    }
}

/// Yaw and pitch of the wrist position seen from the head. Yaw is positive to
/// the right of the forward (+y) axis, pitch positive above the horizontal.
pub fn wrist_angles(hand_in_head: &RigidTransform) -> Result<(f64, f64), AugmentationError> {
    let d = hand_in_head.translation;
    let distance = d.norm();
    if distance <= 1e-6 {
        return Err(AugmentationError::DegeneratePosition { distance });
    }
    let yaw = d.x.atan2(d.y);
    let pitch = d.z.atan2((d.x * d.x + d.y * d.y).sqrt());
    Ok((yaw, pitch))
}

pub fn is_visible(yaw: f64, pitch: f64, fov: &FovSpec) -> bool {
    fov.level(yaw, pitch) <= 1.0
}

/// Draws a field of view from the training distribution by rejection.
pub fn sample_fov<R: Rng + ?Sized>(rng: &mut R) -> Result<FovSpec, AugmentationError> {
    for _ in 0..MAX_FOV_ATTEMPTS {
        let half_x = rng.random_range(0.35..=2.15);
        let half_y = rng.random_range(0.35..=1.35);
        let center_x = rng.random_range(-0.15..=0.15);
        // downward tilt; wrist pitch is positive up, so the center sits below the horizon
        let tilt = rng.random_range(0.0..=1.5);
        let power = rng.random_range(2.0..=10.0);
        let aspect = half_y / half_x;
        if (0.4..=1.1).contains(&aspect) && tilt <= 0.4 + (half_y - 0.35) * 1.1 {
            return Ok(FovSpec {
                center_x,
                center_y: -tilt,
                half_x,
                half_y,
                power,
            });
        }
    }
    Err(AugmentationError::ResamplingExhausted {
        attempts: MAX_FOV_ATTEMPTS,
    })
}

/// Per-frame drop mask (`true` = dropped) for one hand.
pub fn sample_drops<R: Rng + ?Sized>(frames: usize, spec: &DropSpec, rng: &mut R) -> Vec<bool> {
    let mut mask = vec![false; frames];
    let lambda = spec.poisson_rate(frames);
    if frames == 0 || !(lambda > 0.0) {
        return mask;
    }
    let events = Poisson::new(lambda).expect("positive rate").sample(rng) as usize;
    let (mu, sigma) = spec.lognormal_params();
    let durations = LogNormal::new(mu, sigma).expect("valid log-normal");
    for _ in 0..events {
        let raw = if sigma > 0.0 {
            durations.sample(rng)
        } else {
            spec.mean
        };
        let duration = (raw.round() as usize).max(spec.min_duration).max(1);
        let start = rng.random_range(0..frames);
        let end = (start + duration).min(frames);
        mask[start..end].iter_mut().for_each(|m| *m = true);
    }
    mask
}

/// Visibility for both hands of a sequence: inside the field of view and not
/// hit by either drop process. Poses are kept as they are.
pub fn apply_augmentation<R: Rng + ?Sized>(
    hands_in_head: [&[RigidTransform]; 2],
    fov: &FovSpec,
    short: &DropSpec,
    long: &DropSpec,
    rng: &mut R,
) -> Vec<[HandObservation; 2]> {
    let frames = hands_in_head[0].len();
    assert_eq!(hands_in_head[1].len(), frames, "both hands need the same length");
    let mut visible = [vec![false; frames], vec![false; frames]];
    for (hand, poses) in hands_in_head.iter().enumerate() {
        let short_mask = sample_drops(frames, short, rng);
        let long_mask = sample_drops(frames, long, rng);
        for t in 0..frames {
            let in_view = wrist_angles(&poses[t])
                .map(|(yaw, pitch)| is_visible(yaw, pitch, fov))
                .unwrap_or(false);
            visible[hand][t] = in_view && !(short_mask[t] || long_mask[t]);
        }
    }
    (0..frames)
        .map(|t| {
            [0, 1].map(|h| HandObservation {
                pose: hands_in_head[h][t],
                visible: visible[h][t],
            })
        })
        .collect()
}

/// Samples a field of view (per the preset) plus independent short and long
/// drop ratios, then applies them.
pub fn augment_sequence<R: Rng + ?Sized>(
    hands_in_head: [&[RigidTransform]; 2],
    preset: FovPreset,
    rng: &mut R,
) -> Result<Vec<[HandObservation; 2]>, AugmentationError> {
    let fov = preset.resolve(rng)?;
    let short = DropSpec::sample(DropMode::Short, rng);
    let long = DropSpec::sample(DropMode::Long, rng);
    Ok(apply_augmentation(hands_in_head, &fov, &short, &long, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn wide_fov() -> FovSpec {
        FovSpec::new(0.0, 0.0, PI, PI, 2.0).unwrap()
    }

    fn at(x: f64, y: f64, z: f64) -> RigidTransform {
        RigidTransform::from_translation(x, y, z)
    }

    #[test]
    fn wrist_angle_axes() {
        assert_eq!(wrist_angles(&at(0.0, 0.5, 0.0)).unwrap(), (0.0, 0.0));
        let (_, pitch) = wrist_angles(&at(0.0, 0.0, -0.6)).unwrap();
        assert!((pitch + FRAC_PI_2).abs() < 1e-15);
        assert!(matches!(
            wrist_angles(&at(0.0, 0.0, 1e-8)),
            Err(AugmentationError::DegeneratePosition { .. })
        ));
    }

    #[test]
    fn wrist_angles_match_spherical_oracle() {
        // direction (1,1,0): 45° to the right, level
        let (yaw, pitch) = wrist_angles(&at(1.0, 1.0, 0.0)).unwrap();
        assert!((yaw - FRAC_PI_4).abs() < 1e-15);
        assert!(pitch.abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let yaw: f64 = rng.random_range(-3.1..3.1);
            let pitch: f64 = rng.random_range(-1.5..1.5);
            let r: f64 = rng.random_range(0.1..2.0);
            // spherical → cartesian with forward = +y, right = +x, up = +z
            let p = Vector3::new(r * pitch.cos() * yaw.sin(), r * pitch.cos() * yaw.cos(), r * pitch.sin());
            let (a, b) = wrist_angles(&at(p.x, p.y, p.z)).unwrap();
            assert!((a - yaw).abs() < 1e-9 && (b - pitch).abs() < 1e-9);
        }
    }

    #[test]
    fn ellipse_examples() {
        let unit = FovSpec::new(0.0, 0.0, 1.0, 1.0, 2.0).unwrap();
        assert!(is_visible(0.0, 0.0, &unit));
        assert_eq!(unit.level(1.0, 0.0), 1.0);
        assert!(is_visible(1.0, 0.0, &unit));
        assert!((unit.level(0.9, 0.9) - 1.62).abs() < 1e-12);
        assert!(!is_visible(0.9, 0.9, &unit));
        let off = FovSpec::new(0.1, 0.7, 0.5, 0.4, 4.0).unwrap();
        assert!(is_visible(0.1, 0.7, &off));
    }

    #[test]
    fn fov_validation() {
        assert!(FovSpec::new(0.0, 0.0, 0.0, 1.0, 2.0).is_err());
        assert!(FovSpec::new(0.0, 0.0, 1.0, 1.0, 0.5).is_err());
        assert_eq!("pinhole90".parse::<FovPreset>().unwrap(), FovPreset::Pinhole90);
        assert!("fisheye".parse::<FovPreset>().is_err());
    }

    #[test]
    fn sampled_fovs_respect_ranges_and_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let f = sample_fov(&mut rng).unwrap();
            assert!((0.35..=2.15).contains(&f.half_x));
            assert!((0.35..=1.35).contains(&f.half_y));
            assert!((-0.15..=0.15).contains(&f.center_x));
            assert!((-1.5..=0.0).contains(&f.center_y));
            assert!((2.0..=10.0).contains(&f.power));
            let aspect = f.half_y / f.half_x;
            assert!((0.4..=1.1).contains(&aspect));
            assert!(-f.center_y <= 0.4 + (f.half_y - 0.35) * 1.1);
        }
        let a = sample_fov(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample_fov(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fov_rejection_rate() {
        // Monte Carlo over the raw box; the constraint region keeps ~38% of draws.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200_000;
        let mut accepted = 0;
        for _ in 0..n {
            let hx: f64 = rng.random_range(0.35..=2.15);
            let hy: f64 = rng.random_range(0.35..=1.35);
            let cy: f64 = rng.random_range(0.0..=1.5);
            if (0.4..=1.1).contains(&(hy / hx)) && cy <= 0.4 + (hy - 0.35) * 1.1 {
                accepted += 1;
            }
        }
        let rate = accepted as f64 / n as f64;
        assert!(rate > 0.01);
        assert!((rate - FOV_ACCEPTANCE_RATE).abs() < 0.005, "rate {rate}");
    }

    const FOV_ACCEPTANCE_RATE: f64 = 0.3835;

    #[test]
    fn poisson_rate_from_ratio() {
        let mut spec = DropSpec::short(0.1);
        assert_eq!(spec.poisson_rate(300), 15.0);
        spec.ratio = 0.0;
        assert_eq!(spec.poisson_rate(300), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(sample_drops(300, &spec, &mut rng).iter().all(|d| !d));
    }

    #[test]
    fn lognormal_matches_target_moments() {
        for spec in [DropSpec::short(0.1), DropSpec::long(0.1)] {
            let (mu, sigma) = spec.lognormal_params();
            let mean = (mu + sigma * sigma / 2.0).exp();
            let var = ((sigma * sigma).exp() - 1.0) * (2.0 * mu + sigma * sigma).exp();
            assert!((mean - spec.mean).abs() < 1e-9);
            assert!((var.sqrt() - spec.std).abs() < 1e-9);
        }
    }

    #[test]
    fn long_drops_respect_min_duration() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = DropSpec::long(0.2);
        for _ in 0..200 {
            let mask = sample_drops(512, &spec, &mut rng);
            // any run that does not touch the sequence end is at least 5 long
            let mut t = 0;
            while t < mask.len() {
                if mask[t] {
                    let start = t;
                    while t < mask.len() && mask[t] {
                        t += 1;
                    }
                    if t < mask.len() {
                        assert!(t - start >= 5);
                    }
                } else {
                    t += 1;
                }
            }
        }
    }

    #[test]
    fn full_sphere_without_drops_keeps_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let poses: Vec<_> = (0..50)
            .map(|i| at((i as f64 * 0.3).sin(), 0.2 + (i as f64 * 0.7).cos().abs(), -0.5))
            .collect();
        let obs = apply_augmentation(
            [&poses, &poses],
            &wide_fov(),
            &DropSpec::short(0.0),
            &DropSpec::long(0.0),
            &mut rng,
        );
        assert!(obs.iter().all(|o| o[0].visible && o[1].visible));
        assert_eq!(obs[3][1].pose, poses[3]);
    }

    #[test]
    fn narrow_fov_hides_low_wrists() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fov = FovSpec::new(0.0, 0.0, 1.0, 0.35, 2.0).unwrap();
        let poses: Vec<_> = (0..40)
            .map(|i| at(0.2 * (i as f64 * 0.1).sin(), 0.3, -0.6 - 0.01 * i as f64))
            .collect();
        for p in &poses {
            let (yaw, pitch) = wrist_angles(p).unwrap();
            assert!(((yaw / 1.0).powi(2) + (pitch / 0.35).powi(2)) > 1.0);
        }
        let obs = apply_augmentation([&poses, &poses], &fov, &DropSpec::short(0.0), &DropSpec::long(0.0), &mut rng);
        assert!(obs.iter().all(|o| !o[0].visible && !o[1].visible));
    }

    #[test]
    fn augmentation_is_deterministic_and_union_masks() {
        let poses: Vec<_> = (0..200).map(|i| at(0.1, 0.4, -0.3 + 0.001 * i as f64)).collect();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            augment_sequence([&poses, &poses], FovPreset::Random, &mut rng).unwrap()
        };
        assert_eq!(run(9), run(9));

        let fov = wide_fov();
        let short = DropSpec::short(0.1);
        let long = DropSpec::long(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let obs = apply_augmentation([&poses, &poses], &fov, &short, &long, &mut rng);
        // replay the same stream to recover the individual masks
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for hand in 0..2 {
            let s = sample_drops(poses.len(), &short, &mut rng);
            let l = sample_drops(poses.len(), &long, &mut rng);
            for t in 0..poses.len() {
                if s[t] || l[t] {
                    assert!(!obs[t][hand].visible);
                } else {
                    assert!(obs[t][hand].visible);
                }
            }
        }
    }

    mod props {
        use super::super::{is_visible, FovSpec};
        use proptest::prelude::*;

        proptest! {
        #[test]
        fn visibility_is_monotone_in_half_angles(
            yaw in -3.0f64..3.0, pitch in -1.5f64..1.5,
            cx in -0.15f64..0.15, cy in 0.0f64..1.5,
            hx in 0.35f64..2.15, hy in 0.35f64..1.35, p in 2.0f64..10.0,
            gx in 1.0f64..2.0, gy in 1.0f64..2.0,
        ) {
            let small = FovSpec::new(cx, cy, hx, hy, p).unwrap();
            let large = FovSpec::new(cx, cy, hx * gx, hy * gy, p).unwrap();
            if is_visible(yaw, pitch, &small) {
                prop_assert!(is_visible(yaw, pitch, &large));
            }
        }
        }
    }
}
