//! Scripted trajectory baselines: RANDOM and CIRCLE.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::env::{horizontal_dist, Point, UavAction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    Circle,
}

impl std::str::FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Self::Random),
            "circle" => Ok(Self::Circle),
            other => Err(format!("unknown baseline {other:?} (expected random or circle)")),
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Circle => "circle",
        })
    }
}

/// Uniform heading in `[0, 2pi)` and distance in `[0, d_max]`.
pub fn random_policy<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> UavAction {
    UavAction::new(rng.random_range(0.0..TAU), rng.random_range(0.0..=config.d_max))
}

/// All UAVs circle the UE centroid twice per episode, each starting from the
/// angle of its initial position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CirclePlan {
    pub center: Point,
    pub radius: f64,
    /// Angle advanced per slot.
    pub angular_step: f64,
    /// Starting angle of each UAV about the center.
    pub phases: Vec<f64>,
    pub d_max: f64,
}

impl CirclePlan {
    pub fn new(ues: &[Point], initial: &[Point], config: &SimConfig) -> Self {
        let n = ues.len().max(1) as f64;
        let center = Point::new(
            ues.iter().map(|p| p.x).sum::<f64>() / n,
            ues.iter().map(|p| p.y).sum::<f64>() / n,
        );
        let phases = initial
            .iter()
            .map(|p| (p.y - center.y).atan2(p.x - center.x))
            .collect();
        Self {
            center,
            radius: config.r_max,
            angular_step: 2.0 * TAU / config.horizon as f64,
            phases,
            d_max: config.d_max,
        }
    }

    /// Point on the circle that UAV `m` aims for during slot `t` (0-based).
    pub fn target(&self, m: usize, t: usize) -> Point {
        let theta = self.phases[m] + (t + 1) as f64 * self.angular_step;
        Point::new(
            self.center.x + self.radius * theta.cos(),
            self.center.y + self.radius * theta.sin(),
        )
    }
}

/// Flies straight toward this slot's circle point, at most `d_max`.
pub fn circle_policy(plan: &CirclePlan, m: usize, pose: Point, t: usize) -> UavAction {
    let target = plan.target(m, t);
    let dist = horizontal_dist(pose, target);
    if dist == 0.0 {
        return UavAction::hover();
    }
    let angle = (target.y - pose.y).atan2(target.x - pose.x).rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative angles.
    let angle = if angle >= TAU { 0.0 } else { angle };
    UavAction::new(angle, dist.min(plan.d_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn random_moments_and_ranges() {
        let c = SimConfig::default();
        let mut rng = seeded_rng(21);
        let draws: Vec<UavAction> = (0..100_000).map(|_| random_policy(&c, &mut rng)).collect();
        let ma = draws.iter().map(|a| a.angle).sum::<f64>() / draws.len() as f64;
        let md = draws.iter().map(|a| a.dist).sum::<f64>() / draws.len() as f64;
        assert!((ma - std::f64::consts::PI).abs() < 0.02, "{ma}");
        assert!((md - 10.0).abs() < 0.1, "{md}");
        assert!(draws.iter().all(|a| a.check(&c).is_ok()));
        let again: Vec<UavAction> = {
            let mut rng = seeded_rng(21);
            (0..100).map(|_| random_policy(&c, &mut rng)).collect()
        };
        assert_eq!(&draws[..100], &again[..]);
    }

    fn plan(horizon: usize) -> CirclePlan {
        let c = SimConfig {
            horizon,
            ..SimConfig::default()
        };
        let ues = [Point::new(40.0, 50.0), Point::new(60.0, 50.0)];
        CirclePlan::new(&ues, &[Point::new(90.0, 50.0)], &c)
    }

    #[test]
    fn chord_between_consecutive_targets() {
        let p = plan(200);
        let pose = p.target(0, 9);
        let a = circle_policy(&p, 0, pose, 10);
        let dtheta = p.angular_step;
        let chord = 2.0 * p.radius * (dtheta / 2.0).sin();
        assert!((a.dist - chord).abs() < 1e-9);
        // Tangential: heading is perpendicular to the radius up to dtheta / 2.
        let theta = p.phases[0] + 10.0 * dtheta;
        let tangent = (theta + std::f64::consts::FRAC_PI_2).rem_euclid(TAU);
        assert!((a.angle - tangent).abs() - dtheta / 2.0 < 1e-9);
    }

    #[test]
    fn at_target_hovers_and_far_clamps() {
        let p = plan(20);
        assert_eq!(circle_policy(&p, 0, p.target(0, 3), 3).dist, 0.0);
        let far = circle_policy(&p, 0, Point::new(0.0, 0.0), 0);
        assert_eq!(far.dist, 20.0);
    }

    #[test]
    fn two_full_turns_per_episode() {
        let p = plan(20);
        let mut pose = p.target(0, 0);
        let start = (pose.y - p.center.y).atan2(pose.x - p.center.x);
        let mut progress = 0.0;
        let mut prev = start;
        for t in 1..20 {
            let a = circle_policy(&p, 0, pose, t);
            assert!(a.dist < p.d_max);
            pose = Point::new(pose.x + a.dist * a.angle.cos(), pose.y + a.dist * a.angle.sin());
            let ang = (pose.y - p.center.y).atan2(pose.x - p.center.x);
            let mut d = ang - prev;
            if d < 0.0 {
                d += TAU;
            }
            progress += d;
            prev = ang;
        }
        // The first slot already moved the UAV one step from its phase.
        progress += p.angular_step;
        assert!((progress - 2.0 * TAU).abs() < 1e-9, "{progress}");
    }

    #[test]
    fn parses_kinds() {
        assert_eq!("RANDOM".parse::<BaselineKind>().unwrap(), BaselineKind::Random);
        assert_eq!("circle".parse::<BaselineKind>().unwrap(), BaselineKind::Circle);
        assert!("spiral".parse::<BaselineKind>().is_err());
    }
}
