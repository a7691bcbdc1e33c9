//! Benchmark posteriors as unnormalized log-densities on `R^d`.
//!
//! - [`ring_gm_2d`]: six isotropic Gaussians on a ring of radius 4 around
//!   `[3, 3]`, standard deviation 0.38.
//! - [`make_gm`]: randomized well-separated mixtures in `d` dimensions
//!   (centers from [`generate_gm_centers`]).
//! - [`EightSchoolsData`]: the non-centered eight-schools hierarchy over
//!   `u = (mu, ln tau, eta_1..eta_8)`.
//!
//! Every mixture is normalized, so its log-evidence is 0.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffgraph::{Graph, Var};
use crate::mathcore::{chi2_quantile, log_sum_exp, RngStream, Probability};
use crate::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// Isotropic Gaussian mixture with a shared standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmSpec {
    pub centers: Vec<Vec<f64>>,
    pub sigma: f64,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_max: Option<f64>,
}

impl GmSpec {
    /// Equally weighted mixture.
    pub fn equal_weights(centers: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        let k = centers.len();
        let spec = Self {
            weights: vec![1.0 / k.max(1) as f64; k],
            centers,
            sigma,
            seed: None,
            d_min: None,
            d_max: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.centers.is_empty() {
            problems.push("mixture needs at least one center".to_string());
        }
        let d = self.dim();
        if d == 0 || self.centers.iter().any(|c| c.len() != d) {
            problems.push("all centers must share one nonzero dimension".to_string());
        }
        if self.centers.iter().flatten().any(|v| !v.is_finite()) {
            problems.push("centers must be finite".to_string());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            problems.push(format!("sigma {} must be positive", self.sigma));
        }
        if self.weights.len() != self.centers.len() {
            problems.push("one weight per center".to_string());
        } else {
            let total: f64 = self.weights.iter().sum();
            if (total - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| !(w > 0.0)) {
                problems.push(format!("weights must be positive and sum to 1 (sum {total})"));
            }
        }
        for i in 0..self.centers.len() {
            for j in 0..i {
                if self.centers[i] == self.centers[j] {
                    problems.push(format!("centers {j} and {i} coincide"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let spec: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Six modes evenly spaced on a circle of radius 4 around `[3, 3]`, the
/// first on the positive x-axis.
pub fn ring_gm_2d() -> GmSpec {
    let centers = (0..6)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 6.0;
            vec![3.0 + 4.0 * a.cos(), 3.0 + 4.0 * a.sin()]
        })
        .collect();
    GmSpec::equal_weights(centers, 0.38).expect("ring mixture is valid")
}

/// `ln sum_k w_k N(theta; c_k, sigma^2 I)`.
pub fn gm_log_density(spec: &GmSpec, theta: &[f64]) -> Result<f64> {
    if theta.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: theta.len(),
        });
    }
    let var = spec.sigma * spec.sigma;
    let norm = -0.5 * theta.len() as f64 * (LN_2PI + var.ln());
    let terms: Vec<f64> = spec
        .centers
        .iter()
        .zip(&spec.weights)
        .map(|(c, w)| {
            let sq: f64 = theta.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            w.ln() + norm - 0.5 * sq / var
        })
        .collect();
    log_sum_exp(&terms)
}

/// Per-row mixture log-density on the tape (`theta` is `N x d`).
pub fn gm_log_density_graph(spec: &GmSpec, g: &mut Graph, theta: Var) -> Var {
    let (k, d) = (spec.k(), spec.dim());
    let var = spec.sigma * spec.sigma;
    let norm = -0.5 * d as f64 * (LN_2PI + var.ln());
    // |theta - c|^2 = |theta|^2 - 2 theta.c + |c|^2
    let ct = g.input(Array2::from_shape_fn((d, k), |(i, j)| spec.centers[j][i]));
    let offset = g.input(Array2::from_shape_fn((1, k), |(_, j)| {
        let c2: f64 = spec.centers[j].iter().map(|v| v * v).sum();
        spec.weights[j].ln() + norm - 0.5 * c2 / var
    }));
    let t2 = g.square(theta);
    let t2 = g.sum_cols(t2);
    let t2 = g.scale(t2, -0.5 / var);
    let cross = g.matmul(theta, ct);
    let cross = g.scale(cross, 1.0 / var);
    let logits = g.add(cross, t2);
    let logits = g.add(logits, offset);
    g.logsumexp_rows(logits)
}

/// Settings for randomized center placement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmGenConfig {
    pub k: usize,
    pub dim: usize,
    pub d_min: f64,
    pub d_max: f64,
    /// Candidates drawn per batch.
    pub batch: usize,
    pub seed: u64,
    pub max_tries: usize,
    pub box_half_width: f64,
}

impl GmGenConfig {
    /// Thresholds from the 0.99 and 0.999 chi-square quantiles, unit sigma.
    pub fn from_quantiles(dim: usize, k: usize, seed: u64) -> Result<Self> {
        let d_min = chi2_quantile(dim, Probability::new(0.99)?)?.sqrt();
        let d_max = chi2_quantile(dim, Probability::new(0.999)?)?.sqrt();
        Ok(Self {
            k,
            dim,
            d_min,
            d_max,
            batch: 10_000,
            seed,
            max_tries: 1000,
            box_half_width: 5.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.k == 0 || self.dim == 0 || self.batch == 0 {
            problems.push("k, dim and batch must be positive".to_string());
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max) {
            problems.push(format!("need 0 < d_min < d_max, got {} and {}", self.d_min, self.d_max));
        }
        if !(self.box_half_width > 0.0) {
            problems.push("box half width must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

/// Places `k` centers in the box: the first uniformly, each later one a
/// uniform candidate whose distance to the nearest accepted center lies
/// strictly between `d_min` and `d_max`. Candidates come in batches and
/// the accepted set grows while a batch is scanned.
pub fn generate_gm_centers(cfg: &GmGenConfig, rng: &mut RngStream) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let b = cfg.box_half_width;
    let draw = |rng: &mut RngStream| -> Vec<f64> { (0..cfg.dim).map(|_| rng.random_range(-b..b)).collect() };
    let mut centers = vec![draw(rng)];
    let mut tries = 0;
    while centers.len() < cfg.k {
        if tries == cfg.max_tries {
            return Err(Error::CenterPlacement {
                wanted: cfg.k,
                placed: centers.len(),
                tries,
            });
        }
        tries += 1;
        for _ in 0..cfg.batch {
            let x = draw(rng);
            let nearest = centers
                .iter()
                .map(|c| c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            if nearest > cfg.d_min && nearest < cfg.d_max {
                centers.push(x);
                if centers.len() == cfg.k {
                    break;
                }
            }
        }
    }
    Ok(centers)
}

/// Randomized `k`-mode unit-sigma mixture in `dim` dimensions.
pub fn make_gm(dim: usize, k: usize, seed: u64) -> Result<(GmSpec, TargetModel)> {
    if dim < 2 {
        return Err(Error::InvalidConfig(vec![format!("mixture dim {dim} must be at least 2")]));
    }
    let cfg = GmGenConfig::from_quantiles(dim, k, seed)?;
    let centers = generate_gm_centers(&cfg, &mut RngStream::new(seed, 0))?;
    let mut spec = GmSpec::equal_weights(centers, 1.0)?;
    spec.seed = Some(seed);
    spec.d_min = Some(cfg.d_min);
    spec.d_max = Some(cfg.d_max);
    let target = TargetModel::gm(format!("gm{dim}d_k{k}_seed{seed}"), spec.clone());
    Ok((spec, target))
}

/// Observed effects and standard errors of the eight schools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EightSchoolsData {
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Deserialize)]
struct EightSchoolsFile {
    #[serde(rename = "J")]
    j: usize,
    y: Vec<f64>,
    sigma: Vec<f64>,
}

const EIGHT_SCHOOLS_JSON: &str = include_str!("../data/eight_schools.json");

impl EightSchoolsData {
    /// The bundled data fixture.
    pub fn bundled() -> Self {
        Self::from_json(EIGHT_SCHOOLS_JSON).expect("bundled eight-schools fixture is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: EightSchoolsFile = serde_json::from_str(text)?;
        if f.j != 8 || f.y.len() != 8 || f.sigma.len() != 8 {
            return Err(Error::Invalid("eight-schools data needs J = 8 with 8 effects and 8 errors".into()));
        }
        if f.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Invalid("eight-schools standard errors must be positive".into()));
        }
        Ok(Self { y: f.y, sigma: f.sigma })
    }
}

const MU_SCALE: f64 = 5.0;
const TAU_SCALE: f64 = 5.0;

/// Unnormalized log-posterior over `u = (mu, ln tau, eta_1..eta_8)`, with
/// `theta_j = mu + tau eta_j`, `mu ~ N(0, 5^2)`, `tau ~ HalfCauchy(5)` and
/// the `ln tau` Jacobian included.
pub fn eight_schools_log_density(data: &EightSchoolsData, u: &[f64]) -> Result<f64> {
    if u.len() != 10 {
        return Err(Error::DimensionMismatch { expected: 10, got: u.len() });
    }
    let (mu, log_tau) = (u[0], u[1]);
    let tau = log_tau.exp();
    let mut lp = 0.0;
    for j in 0..8 {
        let eta = u[2 + j];
        let r = (data.y[j] - mu - tau * eta) / data.sigma[j];
        lp += -0.5 * r * r - data.sigma[j].ln() - 0.5 * LN_2PI;
        lp += -0.5 * eta * eta - 0.5 * LN_2PI;
    }
    lp += -0.5 * (mu / MU_SCALE).powi(2) - MU_SCALE.ln() - 0.5 * LN_2PI;
    lp += half_cauchy_log_tau(log_tau) + log_tau;
    Ok(lp)
}

/// `ln HalfCauchy(e^x; 5)` written with a softplus so it stays finite for
/// large `x`.
fn half_cauchy_log_tau(log_tau: f64) -> f64 {
    (2.0 / (PI * TAU_SCALE)).ln() - crate::diffgraph::softplus(2.0 * (log_tau - TAU_SCALE.ln()))
}

fn eight_schools_graph(data: &EightSchoolsData, g: &mut Graph, u: Var) -> Var {
    let n = g.shape(u).0;
    let mu = g.col_range(u, 0, 1);
    let log_tau = g.col_range(u, 1, 2);
    let eta = g.col_range(u, 2, 10);
    let tau = g.exp(log_tau);
    let theta = g.mul(eta, tau);
    let theta = g.add(theta, mu);
    let y = g.input(Array2::from_shape_fn((1, 8), |(_, j)| data.y[j]));
    let inv_s = g.input(Array2::from_shape_fn((1, 8), |(_, j)| 1.0 / data.sigma[j]));
    let r = g.sub(y, theta);
    let r = g.mul(r, inv_s);
    let r2 = g.square(r);
    let e2 = g.square(eta);
    let quad = g.add(r2, e2);
    let quad = g.sum_cols(quad);
    let quad = g.scale(quad, -0.5);
    let mu2 = g.square(mu);
    let mu2 = g.scale(mu2, -0.5 / (MU_SCALE * MU_SCALE));
    let shifted = g.add_scalar(log_tau, -TAU_SCALE.ln());
    let shifted = g.scale(shifted, 2.0);
    let cauchy = g.softplus(shifted);
    let cauchy = g.neg(cauchy);
    let constant = -data.sigma.iter().map(|s| s.ln()).sum::<f64>() - 16.0 * 0.5 * LN_2PI - MU_SCALE.ln()
        - 0.5 * LN_2PI
        + (2.0 / (PI * TAU_SCALE)).ln();
    let mut total = g.add(quad, mu2);
    total = g.add(total, cauchy);
    total = g.add(total, log_tau);
    let c = g.constant(n, 1, constant);
    g.add(total, c)
}

/// What a [`TargetModel`] evaluates.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetKind {
    Gm(GmSpec),
    EightSchools(EightSchoolsData),
    /// Normalized isotropic Gaussian.
    Gaussian { mean: Vec<f64>, var: f64 },
}

/// A named unnormalized log-density `ln p'(theta)` on `R^dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetModel {
    pub name: String,
    pub kind: TargetKind,
    pub true_log_evidence: Option<f64>,
}

impl TargetModel {
    pub fn gm(name: impl Into<String>, spec: GmSpec) -> Self {
        Self {
            name: name.into(),
            kind: TargetKind::Gm(spec),
            true_log_evidence: Some(0.0),
        }
    }

    pub fn ring() -> Self {
        Self::gm("ring_gm_2d", ring_gm_2d())
    }

    pub fn eight_schools(data: EightSchoolsData) -> Self {
        Self {
            name: "eight_schools".into(),
            kind: TargetKind::EightSchools(data),
            true_log_evidence: None,
        }
    }

    pub fn gaussian(mean: Vec<f64>, var: f64) -> Result<Self> {
        if mean.is_empty() || !(var > 0.0) {
            return Err(Error::Invalid("gaussian target needs a mean and positive variance".into()));
        }
        Ok(Self {
            name: "gaussian".into(),
            kind: TargetKind::Gaussian { mean, var },
            true_log_evidence: Some(0.0),
        })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            TargetKind::Gm(s) => s.dim(),
            TargetKind::EightSchools(_) => 10,
            TargetKind::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn mode_centers(&self) -> Option<&[Vec<f64>]> {
        match &self.kind {
            TargetKind::Gm(s) => Some(&s.centers),
            _ => None,
        }
    }

    pub fn component_sigma(&self) -> Option<f64> {
        match &self.kind {
            TargetKind::Gm(s) => Some(s.sigma),
            _ => None,
        }
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        match &self.kind {
            TargetKind::Gm(s) => gm_log_density(s, theta),
            TargetKind::EightSchools(d) => eight_schools_log_density(d, theta),
            TargetKind::Gaussian { mean, var } => crate::mathcore::gaussian_logpdf(theta, mean, *var),
        }
    }

    pub fn log_density_batch(&self, theta: &Array2<f64>) -> Result<Vec<f64>> {
        theta
            .rows()
            .into_iter()
            .map(|r| self.log_density(&r.to_vec()))
            .collect()
    }

    /// Per-row log-density on the tape; `theta` is `N x dim`.
    pub fn log_density_graph(&self, g: &mut Graph, theta: Var) -> Var {
        assert_eq!(g.shape(theta).1, self.dim(), "target dimension");
        match &self.kind {
            TargetKind::Gm(s) => gm_log_density_graph(s, g, theta),
            TargetKind::EightSchools(d) => eight_schools_graph(d, g, theta),
            TargetKind::Gaussian { mean, var } => {
                let d = mean.len();
                let m = g.input(Array2::from_shape_vec((1, d), mean.clone()).expect("row"));
                let r = g.sub(theta, m);
                let r2 = g.square(r);
                let s = g.sum_cols(r2);
                let s = g.scale(s, -0.5 / var);
                g.add_scalar(s, -0.5 * d as f64 * (LN_2PI + var.ln()))
            }
        }
    }
}

/// Serializable description of a target, as it appears in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Ring2d {},
    /// Mixture read from a JSON [`GmSpec`] file.
    GmFile { path: std::path::PathBuf },
    /// Mixture generated on the fly by [`make_gm`].
    GmRandom { dim: usize, modes: usize, seed: u64 },
    EightSchools {},
    /// Normalized isotropic Gaussian.
    Gaussian { mean: Vec<f64>, var: f64 },
}

impl TargetSpec {
    pub fn build(&self) -> Result<TargetModel> {
        match self {
            Self::Ring2d {} => Ok(TargetModel::ring()),
            Self::GmFile { path } => {
                let spec = GmSpec::load(path)?;
                let name = path.file_stem().map_or("gm".into(), |s| s.to_string_lossy().into_owned());
                Ok(TargetModel::gm(name, spec))
            }
            Self::GmRandom { dim, modes, seed } => Ok(make_gm(*dim, *modes, *seed)?.1),
            Self::EightSchools {} => Ok(TargetModel::eight_schools(EightSchoolsData::bundled())),
            Self::Gaussian { mean, var } => TargetModel::gaussian(mean.clone(), *var),
        }
    }
}
