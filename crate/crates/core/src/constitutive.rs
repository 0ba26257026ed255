//! Van Genuchten–Mualem soil model and layered media.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::mesh::Point;

/// Conductivity never drops below this fraction of the saturated value.
pub const K_MIN_FRACTION: f64 = 1e-12;

/// Hydraulic parameters of one soil.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoilModel {
    /// Saturated conductivity `K_S` [m/s].
    pub ks: f64,
    /// Van Genuchten `alpha` [1/m].
    pub alpha: f64,
    /// Van Genuchten `n`; `m = (n - 1)/n`.
    pub n: f64,
    pub theta_r: f64,
    pub theta_s: f64,
    /// Porosity used by the seepage-velocity goal.
    pub porosity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoilError(pub String);

impl fmt::Display for SoilError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SoilError {}

/// Named parameter sets `(name, K_S, n, alpha)`.
pub const PRESETS: [(&str, f64, f64, f64); 6] = [
    ("sandy_loam", 5e-6, 1.65, 0.66),
    ("med_sandstone", 9e-6, 1.36, 0.012),
    ("slate", 5.0e-9, 6.75, 0.98),
    ("fine_sandstone", 1.15e-6, 1.361, 0.012),
    ("diabase", 2e-5, 1.523, 1.066),
    ("example", 1.0, 2.06, 1.0),
];

pub const DEFAULT_THETA_R: f64 = 0.05;
pub const DEFAULT_THETA_S: f64 = 0.40;

impl SoilModel {
    pub fn new(ks: f64, alpha: f64, n: f64) -> Result<SoilModel, SoilError> {
        let s = SoilModel {
            ks,
            alpha,
            n,
            theta_r: DEFAULT_THETA_R,
            theta_s: DEFAULT_THETA_S,
            porosity: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn preset(name: &str) -> Option<SoilModel> {
        PRESETS.iter().find(|p| p.0 == name).map(|&(_, ks, n, alpha)| SoilModel {
            ks,
            alpha,
            n,
            theta_r: DEFAULT_THETA_R,
            theta_s: DEFAULT_THETA_S,
            porosity: 1.0,
        })
    }

    pub fn validate(&self) -> Result<(), SoilError> {
        let err = |m: String| Err(SoilError(m));
        if !(self.ks.is_finite() && self.ks > 0.0) {
            return err(format!("saturated conductivity must be positive, got {}", self.ks));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return err(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.n.is_finite() && self.n > 1.0) {
            return err(format!("van Genuchten n must exceed 1, got {}", self.n));
        }
        if !(self.theta_r.is_finite() && self.theta_s.is_finite()) {
            return err("water contents must be finite".into());
        }
        if !(0.0 <= self.theta_r && self.theta_r < self.theta_s && self.theta_s <= 1.0) {
            return err(format!(
                "need 0 <= theta_r < theta_s <= 1, got theta_r = {}, theta_s = {}",
                self.theta_r, self.theta_s
            ));
        }
        if !(self.porosity.is_finite() && self.porosity >= self.theta_s && self.porosity <= 1.0) {
            return err(format!("porosity must lie in [theta_s, 1], got {}", self.porosity));
        }
        Ok(())
    }

    pub fn m(&self) -> f64 {
        (self.n - 1.0) / self.n
    }

    pub fn k_min(&self) -> f64 {
        K_MIN_FRACTION * self.ks
    }

    /// `s = (-alpha u)^n` for `u < 0`.
    fn s(&self, u: f64) -> f64 {
        (-self.alpha * u).powf(self.n)
    }

    /// Effective saturation `Θ(u)`.
    pub fn effective_saturation(&self, u: f64) -> f64 {
        if u >= 0.0 {
            return 1.0;
        }
        (-self.m() * self.s(u).ln_1p()).exp()
    }

    /// Volumetric water content `θ = θ_R + (θ_S - θ_R) Θ`.
    pub fn water_content(&self, u: f64) -> f64 {
        self.theta_r + (self.theta_s - self.theta_r) * self.effective_saturation(u)
    }

    /// Mualem relative conductivity `K_R(u)` computed from the head without
    /// cancellation near saturation.
    pub fn relative_conductivity(&self, u: f64) -> f64 {
        if u >= 0.0 {
            return 1.0;
        }
        let m = self.m();
        let s = self.s(u);
        if s == 0.0 {
            return 1.0;
        }
        let l1p = s.ln_1p();
        // Θ^{1/m} = 1/(1+s), so ln(1 - Θ^{1/m}) = ln(s/(1+s))
        let ln_one_minus = if s <= 1.0 { s.ln() - l1p } else { -(1.0 / s).ln_1p() };
        let a = -(m * ln_one_minus).exp_m1();
        let theta_sqrt = (-0.5 * m * l1p).exp();
        theta_sqrt * a * a
    }

    /// Conductivity `k(u) = max(K_S K_R(u), k_min)`.
    pub fn conductivity(&self, u: f64) -> f64 {
        (self.ks * self.relative_conductivity(u)).max(self.k_min())
    }

    /// `dΘ/du`.
    pub fn d_saturation(&self, u: f64) -> f64 {
        if u >= 0.0 {
            return 0.0;
        }
        let m = self.m();
        let s = self.s(u);
        // dΘ/du = m alpha n s^m (1+s)^{-m-1}
        m * self.alpha * self.n * (m * s.ln() - (m + 1.0) * s.ln_1p()).exp()
    }

    /// `dk/du`; zero where the floor is active.
    pub fn d_conductivity(&self, u: f64) -> f64 {
        if u >= 0.0 || self.ks * self.relative_conductivity(u) <= self.k_min() {
            return 0.0;
        }
        let m = self.m();
        let s = self.s(u);
        if s == 0.0 {
            return 0.0;
        }
        let l1p = s.ln_1p();
        let theta = (-m * l1p).exp();
        let ln_one_minus = if s <= 1.0 { s.ln() - l1p } else { -(1.0 / s).ln_1p() };
        let a = -(m * ln_one_minus).exp_m1();
        // dA/dΘ = (1 - Θ^{1/m})^{m-1} Θ^{1/m - 1}
        let da = ((m - 1.0) * ln_one_minus + (1.0 / m - 1.0) * theta.ln()).exp();
        let dkr = 0.5 * a * a / theta.sqrt() + 2.0 * theta.sqrt() * a * da;
        self.ks * dkr * self.d_saturation(u)
    }
}

/// Mualem relative conductivity as a function of effective saturation
/// `theta` in `(0, 1]`.
pub fn relative_conductivity_of_saturation(theta: f64, m: f64) -> Result<f64, SoilError> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(SoilError(format!("effective saturation must lie in (0, 1], got {theta}")));
    }
    if theta == 1.0 {
        return Ok(1.0);
    }
    let x = theta.powf(1.0 / m);
    let a = -(m * (-x).ln_1p()).exp_m1();
    Ok(theta.sqrt() * a * a)
}

/// Horizontal layer `z_low <= z < z_high`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub z_low: f64,
    pub z_high: f64,
    pub soil: SoilModel,
}

/// Piecewise-constant soil parameters over horizontal layers. A point on an
/// interface belongs to the layer above it; the top of the stack belongs to
/// the top layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredMedium {
    layers: Vec<Layer>,
}

impl LayeredMedium {
    pub fn new(mut layers: Vec<Layer>) -> Result<LayeredMedium, SoilError> {
        if layers.is_empty() {
            return Err(SoilError("at least one soil layer is required".into()));
        }
        for l in &layers {
            l.soil.validate()?;
            if !(l.z_low.is_finite() && l.z_high.is_finite() && l.z_low < l.z_high) {
                return Err(SoilError(format!("layer [{}, {}] is empty", l.z_low, l.z_high)));
            }
        }
        layers.sort_by(|a, b| a.z_low.total_cmp(&b.z_low));
        for w in layers.windows(2) {
            if (w[0].z_high - w[1].z_low).abs() > 1e-12 * (1.0 + w[1].z_low.abs()) {
                return Err(SoilError(format!(
                    "layers must tile the column: gap or overlap between {} and {}",
                    w[0].z_high, w[1].z_low
                )));
            }
        }
        Ok(LayeredMedium { layers })
    }

    pub fn homogeneous(soil: SoilModel, z_low: f64, z_high: f64) -> Result<Self, SoilError> {
        LayeredMedium::new(vec![Layer { z_low, z_high, soil }])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.layers[0].z_low, self.layers[self.layers.len() - 1].z_high)
    }

    pub fn layer_index(&self, z: f64) -> Result<usize, SoilError> {
        let (lo, hi) = self.z_range();
        let tol = 1e-12 * (hi - lo).max(1.0);
        if !(z >= lo - tol && z <= hi + tol) {
            return Err(SoilError(format!("elevation {z} lies outside the layered column [{lo}, {hi}]")));
        }
        let k = self.layers.iter().rposition(|l| z >= l.z_low).unwrap_or(0);
        Ok(k)
    }

    pub fn soil_at(&self, p: Point) -> Result<&SoilModel, SoilError> {
        Ok(&self.layers[self.layer_index(p.z)?].soil)
    }

    pub fn conductivity(&self, u: f64, p: Point) -> Result<f64, SoilError> {
        Ok(self.soil_at(p)?.conductivity(u))
    }

    pub fn max_ks(&self) -> f64 {
        self.layers.iter().map(|l| l.soil.ks).fold(0.0, f64::max)
    }
}
