//! Propagation: log-distance path loss, Rayleigh block fading, SINR and
//! Shannon capacity.
//!
//! Receivers are indexed users first, then eavesdroppers. Every AP other
//! than the serving one contributes interference at every receiver; nobody
//! cancels the jamming signal.

use ndarray::Array2;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("distance {distance} m is below the reference distance {ref_distance} m")]
    BelowReferenceDistance { distance: f64, ref_distance: f64 },
    #[error("SINR must be non-negative, got {0}")]
    NegativeSinr(f64),
    #[error("invalid scenario: `{key}` {reason}")]
    InvalidScenario { key: &'static str, reason: String },
}

/// A point in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Static geometry, power budget and propagation constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub ap_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
    pub eve_positions: Vec<Point>,
    /// `user_to_ap[u]` is the AP serving user `u`.
    pub user_to_ap: Vec<usize>,
    /// Per-AP transmit power ceiling, watts.
    pub p_max: f64,
    /// Receiver noise power, watts.
    pub noise_power: f64,
    pub path_loss_exponent: f64,
    /// Reference distance d0, meters.
    pub ref_distance: f64,
    /// Linear gain at d0.
    pub ref_gain: f64,
}

impl Default for ScenarioConfig {
    /// Three APs on an L, each user 10 m outward from its AP, two
    /// eavesdroppers inside the triangle.
    fn default() -> Self {
        Self {
            ap_positions: vec![Point::new(0.0, 0.0), Point::new(60.0, 0.0), Point::new(0.0, 60.0)],
            user_positions: vec![
                Point::new(-10.0, 0.0),
                Point::new(70.0, 0.0),
                Point::new(0.0, 70.0),
            ],
            eve_positions: vec![Point::new(20.0, 20.0), Point::new(40.0, 10.0)],
            user_to_ap: vec![0, 1, 2],
            p_max: 1.0,
            noise_power: 1e-9,
            path_loss_exponent: 3.0,
            ref_distance: 1.0,
            ref_gain: 1e-3,
        }
    }
}

impl ScenarioConfig {
    pub fn n_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn n_eves(&self) -> usize {
        self.eve_positions.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.n_users() + self.n_eves()
    }

    /// Receiver position; users come first, then eavesdroppers.
    pub fn receiver(&self, r: usize) -> Point {
        if r < self.n_users() {
            self.user_positions[r]
        } else {
            self.eve_positions[r - self.n_users()]
        }
    }

    /// Users served by `ap`, in index order.
    pub fn users_of(&self, ap: usize) -> impl Iterator<Item = usize> + '_ {
        self.user_to_ap
            .iter()
            .enumerate()
            .filter(move |(_, &a)| a == ap)
            .map(|(u, _)| u)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let invalid = |key: &'static str, reason: String| ChannelError::InvalidScenario { key, reason };
        if self.ap_positions.is_empty() {
            return Err(invalid("ap_positions", "must list at least one AP".into()));
        }
        if self.user_positions.is_empty() {
            return Err(invalid("user_positions", "must list at least one user".into()));
        }
        if self.user_to_ap.len() != self.n_users() {
            return Err(invalid(
                "user_to_ap",
                format!("has {} entries for {} users", self.user_to_ap.len(), self.n_users()),
            ));
        }
        if let Some(&a) = self.user_to_ap.iter().find(|&&a| a >= self.n_aps()) {
            return Err(invalid("user_to_ap", format!("references AP {a}, only {} exist", self.n_aps())));
        }
        let all_finite = self
            .ap_positions
            .iter()
            .chain(&self.user_positions)
            .chain(&self.eve_positions)
            .all(|p| p.x.is_finite() && p.y.is_finite());
        if !all_finite {
            return Err(invalid("positions", "must be finite".into()));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(invalid("p_max", format!("must be positive and finite, got {}", self.p_max)));
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(invalid("noise_power", format!("must be positive, got {}", self.noise_power)));
        }
        if !(self.path_loss_exponent >= 2.0 && self.path_loss_exponent.is_finite()) {
            return Err(invalid(
                "path_loss_exponent",
                format!("must be at least 2, got {}", self.path_loss_exponent),
            ));
        }
        if !(self.ref_distance > 0.0 && self.ref_distance.is_finite()) {
            return Err(invalid("ref_distance", format!("must be positive, got {}", self.ref_distance)));
        }
        if !(self.ref_gain > 0.0 && self.ref_gain.is_finite()) {
            return Err(invalid("ref_gain", format!("must be positive, got {}", self.ref_gain)));
        }
        for (a, ap) in self.ap_positions.iter().enumerate() {
            for r in 0..self.n_receivers() {
                let d = ap.distance(&self.receiver(r));
                if d < self.ref_distance {
                    return Err(invalid(
                        "positions",
                        format!("AP {a} is {d} m from receiver {r}, closer than ref_distance"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Log-distance large-scale gain `g0 * (d / d0)^(-alpha)`.
pub fn path_loss(distance: f64, cfg: &ScenarioConfig) -> Result<f64, ChannelError> {
    if !(distance >= cfg.ref_distance) {
        return Err(ChannelError::BelowReferenceDistance {
            distance,
            ref_distance: cfg.ref_distance,
        });
    }
    Ok(cfg.ref_gain * (distance / cfg.ref_distance).powf(-cfg.path_loss_exponent))
}

/// Rayleigh power gain `|h|^2`, a unit-mean exponential draw.
pub fn sample_small_scale<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Exp1)
}

/// Small-scale fading source used by [`realize_channel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fading {
    Rayleigh,
    /// Every small-scale factor is 1: the channel is pure path loss.
    Unit,
}

/// Link power gains, indexed `(ap, receiver)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    gains: Array2<f64>,
}

impl ChannelRealization {
    pub fn from_gains(gains: Array2<f64>) -> Self {
        debug_assert!(gains.iter().all(|g| g.is_finite() && *g >= 0.0));
        Self { gains }
    }

    pub fn gain(&self, ap: usize, receiver: usize) -> f64 {
        self.gains[[ap, receiver]]
    }

    pub fn gains(&self) -> &Array2<f64> {
        &self.gains
    }

    pub fn n_aps(&self) -> usize {
        self.gains.nrows()
    }

    pub fn n_receivers(&self) -> usize {
        self.gains.ncols()
    }
}

/// Draws one block-fading realization: path loss times an independent
/// small-scale factor per link, links visited AP-major.
pub fn realize_channel<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    fading: Fading,
    rng: &mut R,
) -> Result<ChannelRealization, ChannelError> {
    realize_with(cfg, || match fading {
        Fading::Rayleigh => sample_small_scale(rng),
        Fading::Unit => 1.0,
    })
}

/// The large-scale-only channel (every small-scale factor 1).
pub fn mean_channel(cfg: &ScenarioConfig) -> Result<ChannelRealization, ChannelError> {
    realize_with(cfg, || 1.0)
}

fn realize_with(
    cfg: &ScenarioConfig,
    mut small_scale: impl FnMut() -> f64,
) -> Result<ChannelRealization, ChannelError> {
    let mut gains = Array2::zeros((cfg.n_aps(), cfg.n_receivers()));
    for (a, ap) in cfg.ap_positions.iter().enumerate() {
        for r in 0..cfg.n_receivers() {
            gains[[a, r]] = path_loss(ap.distance(&cfg.receiver(r)), cfg)? * small_scale();
        }
    }
    Ok(ChannelRealization { gains })
}

/// SINR at `receiver` for the signal of `serving_ap`; all other APs
/// interfere.
pub fn sinr(receiver: usize, serving_ap: usize, powers: &[f64], ch: &ChannelRealization, noise_power: f64) -> f64 {
    let mut interference = 0.0;
    for (a, &p) in powers.iter().enumerate() {
        if a != serving_ap {
            interference += p * ch.gain(a, receiver);
        }
    }
    powers[serving_ap] * ch.gain(serving_ap, receiver) / (interference + noise_power)
}

/// `log2(1 + sinr)` in bits/s/Hz.
pub fn shannon_capacity(sinr: f64) -> Result<f64, ChannelError> {
    if !(sinr >= 0.0) {
        return Err(ChannelError::NegativeSinr(sinr));
    }
    Ok(sinr.ln_1p() / std::f64::consts::LN_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(d0: f64, alpha: f64, g0: f64) -> ScenarioConfig {
        ScenarioConfig {
            ref_distance: d0,
            path_loss_exponent: alpha,
            ref_gain: g0,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn path_loss_examples() {
        assert_eq!(path_loss(1.0, &cfg(1.0, 3.0, 1e-3)).unwrap(), 1e-3);
        assert!((path_loss(10.0, &cfg(1.0, 3.0, 1e-3)).unwrap() - 1e-6).abs() <= 1e-12 * 1e-6);
        assert_eq!(path_loss(2.0, &cfg(1.0, 2.0, 1.0)).unwrap(), 0.25);
    }

    #[test]
    fn path_loss_rejects_short_distance() {
        let err = path_loss(0.5, &cfg(1.0, 3.0, 1e-3)).unwrap_err();
        assert!(matches!(err, ChannelError::BelowReferenceDistance { .. }));
        assert!(path_loss(f64::NAN, &cfg(1.0, 3.0, 1e-3)).is_err());
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(shannon_capacity(0.0).unwrap(), 0.0);
        assert_eq!(shannon_capacity(1.0).unwrap(), 1.0);
        assert_eq!(shannon_capacity(3.0).unwrap(), 2.0);
        assert!(shannon_capacity(-0.1).is_err());
    }

    #[test]
    fn sinr_examples() {
        let ch = ChannelRealization::from_gains(array![[1.0]]);
        assert_eq!(sinr(0, 0, &[1.0], &ch, 1.0), 1.0);
        // Signal 2, one interferer contributing 1, noise 1.
        let ch = ChannelRealization::from_gains(array![[2.0], [1.0]]);
        assert_eq!(sinr(0, 0, &[1.0, 1.0], &ch, 1.0), 1.0);
    }

    #[test]
    fn unit_fading_is_pure_path_loss() {
        let cfg = ScenarioConfig::default();
        let ch = mean_channel(&cfg).unwrap();
        for a in 0..cfg.n_aps() {
            for r in 0..cfg.n_receivers() {
                let expected = path_loss(cfg.ap_positions[a].distance(&cfg.receiver(r)), &cfg).unwrap();
                assert_eq!(ch.gain(a, r), expected);
            }
        }
    }

    #[test]
    fn identical_seeds_identical_channels() {
        let cfg = ScenarioConfig::default();
        let a = realize_channel(&cfg, Fading::Rayleigh, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = realize_channel(&cfg, Fading::Rayleigh, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        let c = realize_channel(&cfg, Fading::Rayleigh, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn realization_mean_tracks_path_loss() {
        let cfg = ScenarioConfig::default();
        let pl = mean_channel(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut acc = Array2::<f64>::zeros(pl.gains().raw_dim());
        for _ in 0..n {
            acc += realize_channel(&cfg, Fading::Rayleigh, &mut rng).unwrap().gains();
        }
        acc /= n as f64;
        for (m, p) in acc.iter().zip(pl.gains()) {
            assert!((m / p - 1.0).abs() < 0.01, "mean {m} vs path loss {p}");
        }
    }

    #[test]
    fn default_scenario_is_valid() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.n_aps(), cfg.n_users(), cfg.n_eves()), (3, 3, 2));
    }

    #[test]
    fn validation_names_the_key() {
        let bad = ScenarioConfig { p_max: -1.0, ..ScenarioConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("p_max"));
        let bad = ScenarioConfig { path_loss_exponent: 1.5, ..ScenarioConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("path_loss_exponent"));
        let mut bad = ScenarioConfig::default();
        bad.eve_positions[0] = Point::new(0.5, 0.0);
        assert!(bad.validate().is_err());
        let bad = ScenarioConfig { user_to_ap: vec![0, 1, 5], ..ScenarioConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("user_to_ap"));
    }
}
