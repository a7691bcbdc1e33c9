//! Mode capture, grid-transform drift and sample export.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::flow::FlowModel;
use crate::mathcore::{chi2_quantile, Probability, RngStream};
use crate::targets::{GmSpec, TargetModel};
use crate::{Error, Result};

/// Per-mode outcome of [`mode_capture`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    /// Fraction of all samples assigned to each mode and inside its radius.
    pub fractions: Vec<f64>,
    pub captured: Vec<bool>,
    pub modes_captured: usize,
    pub n_samples: usize,
    pub quantile: f64,
    pub capture_threshold: f64,
    /// `sigma * sqrt(chi2_quantile(d, quantile))`.
    pub radius: f64,
    /// Distances of the samples assigned to each mode, in sample order.
    pub distances: Vec<Vec<f64>>,
}

/// Capture radius of one mixture component.
pub fn capture_radius(spec: &GmSpec, quantile: f64) -> Result<f64> {
    Ok(spec.sigma * chi2_quantile(spec.dim(), Probability::new(quantile)?)?.sqrt())
}

/// Nearest-center assignment; ties go to the lower index.
pub fn assign_to_centers(samples: &Array2<f64>, centers: &[Vec<f64>]) -> Result<Vec<(usize, f64)>> {
    let d = centers.first().ok_or(Error::EmptyInput("centers"))?.len();
    if samples.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: samples.ncols(),
        });
    }
    Ok(samples
        .rows()
        .into_iter()
        .map(|s| {
            let mut best = (0, f64::INFINITY);
            for (k, c) in centers.iter().enumerate() {
                let d2: f64 = s.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < best.1 {
                    best = (k, d2);
                }
            }
            (best.0, best.1.sqrt())
        })
        .collect())
}

/// Mode `k` is captured when more than `threshold` of all samples are
/// assigned to it and lie within its capture radius.
pub fn mode_capture(samples: &Array2<f64>, spec: &GmSpec, quantile: f64, threshold: f64) -> Result<ModeReport> {
    let n = samples.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("samples"));
    }
    Probability::new(threshold)?;
    let radius = capture_radius(spec, quantile)?;
    let mut distances = vec![Vec::new(); spec.k()];
    let mut inside = vec![0usize; spec.k()];
    for (k, dist) in assign_to_centers(samples, &spec.centers)? {
        distances[k].push(dist);
        if dist <= radius {
            inside[k] += 1;
        }
    }
    let fractions: Vec<f64> = inside.iter().map(|&c| c as f64 / n as f64).collect();
    let captured: Vec<bool> = fractions.iter().map(|&f| f > threshold).collect();
    Ok(ModeReport {
        modes_captured: captured.iter().filter(|&&c| c).count(),
        fractions,
        captured,
        n_samples: n,
        quantile,
        capture_threshold: threshold,
        radius,
        distances,
    })
}

/// Draws `n` samples at `T = 1` and scores them with quantile 0.9 and
/// threshold 0.05.
pub fn model_mode_capture(model: &FlowModel, spec: &GmSpec, n: usize, rng: &mut RngStream) -> Result<ModeReport> {
    let (theta, _) = model.sample(rng, n, 1.0)?;
    mode_capture(&theta, spec, 0.9, 0.05)
}

/// A regular latent grid and its image under the flow at several
/// temperatures.
#[derive(Clone, Debug, PartialEq)]
pub struct GridTransform {
    range: [f64; 2],
    spacing: f64,
    grid: Array2<f64>,
    temps: Vec<f64>,
    mapped: Vec<Array2<f64>>,
}

impl GridTransform {
    /// Square grid over `range x range` with the given spacing, ends
    /// included.
    pub fn grid_points(range: [f64; 2], spacing: f64) -> Result<Array2<f64>> {
        let [lo, hi] = range;
        if !(spacing > 0.0 && lo <= hi && (hi - lo).is_finite()) {
            return Err(Error::Invalid(format!("bad grid range [{lo}, {hi}] or spacing {spacing}")));
        }
        let m = ((hi - lo) / spacing + 1e-9).floor() as usize + 1;
        let axis: Vec<f64> = (0..m).map(|i| lo + i as f64 * spacing).collect();
        Ok(Array2::from_shape_fn((m * m, 2), |(r, c)| if c == 0 { axis[r % m] } else { axis[r / m] }))
    }

    /// Assembles a transform from precomputed images.
    pub fn new(range: [f64; 2], spacing: f64, grid: Array2<f64>, temps: Vec<f64>, mapped: Vec<Array2<f64>>) -> Result<Self> {
        if temps.len() != mapped.len() || temps.is_empty() {
            return Err(Error::Invalid(format!("{} temperatures for {} mapped grids", temps.len(), mapped.len())));
        }
        if let Some(m) = mapped.iter().find(|m| m.dim() != grid.dim()) {
            return Err(Error::Invalid(format!("mapped grid {:?} differs from grid {:?}", m.dim(), grid.dim())));
        }
        Ok(Self {
            range,
            spacing,
            grid,
            temps,
            mapped,
        })
    }

    pub fn range(&self) -> [f64; 2] {
        self.range
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn grid(&self) -> &Array2<f64> {
        &self.grid
    }

    pub fn temps(&self) -> &[f64] {
        &self.temps
    }

    pub fn mapped(&self) -> &[Array2<f64>] {
        &self.mapped
    }

    /// Long-format CSV: `T,grid_x,grid_y,mapped_x,mapped_y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("T,grid_x,grid_y,mapped_x,mapped_y\n");
        for (t, m) in self.temps.iter().zip(&self.mapped) {
            for (g, p) in self.grid.rows().into_iter().zip(m.rows()) {
                writeln!(out, "{t},{},{},{},{}", g[0], g[1], p[0], p[1]).expect("write to string");
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Default latent grid range.
pub const GRID_RANGE: [f64; 2] = [-3.0, 3.0];
/// Default latent grid spacing.
pub const GRID_SPACING: f64 = 0.5;

/// Maps a regular 2-d grid through `flow_forward` at each temperature.
pub fn grid_transform(model: &FlowModel, range: [f64; 2], spacing: f64, temps: &[f64]) -> Result<GridTransform> {
    if model.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: model.dim(),
        });
    }
    if temps.is_empty() {
        return Err(Error::EmptyInput("temperatures"));
    }
    let grid = GridTransform::grid_points(range, spacing)?;
    let mapped = temps
        .iter()
        .map(|&t| Ok(model.flow_forward_batch(&grid, &vec![t; grid.nrows()])?.0))
        .collect::<Result<Vec<_>>>()?;
    GridTransform::new(range, spacing, grid, temps.to_vec(), mapped)
}

/// Mean over grid points of the largest displacement between any two
/// temperatures, in units of the grid spacing.
pub fn transform_drift(gt: &GridTransform) -> Result<f64> {
    let m = &gt.mapped;
    if m.len() < 2 {
        return Err(Error::Invalid("drift needs at least two temperatures".into()));
    }
    let n = gt.grid.nrows();
    let mut total = 0.0;
    for p in 0..n {
        let mut worst = 0.0f64;
        for a in 0..m.len() {
            for b in a + 1..m.len() {
                let dx = m[a][[p, 0]] - m[b][[p, 0]];
                let dy = m[a][[p, 1]] - m[b][[p, 1]];
                worst = worst.max(dx.hypot(dy));
            }
        }
        total += worst;
    }
    Ok(total / n as f64 / gt.spacing)
}

/// Writes `n` samples at temperature `t` as CSV with header
/// `theta_1,...,theta_d,log_q,log_p_unnorm`.
pub fn export_samples(model: &FlowModel, target: &TargetModel, n: usize, t: f64, rng: &mut RngStream, path: &Path) -> Result<()> {
    if model.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: model.dim(),
        });
    }
    let (theta, log_q) = model.sample(rng, n, t)?;
    let d = model.dim();
    let mut out: String = (1..=d).map(|i| format!("theta_{i},")).collect();
    out.push_str("log_q,log_p_unnorm\n");
    for (row, lq) in theta.rows().into_iter().zip(log_q) {
        for v in row {
            write!(out, "{v},").expect("write to string");
        }
        writeln!(out, "{lq},{}", target.log_density(&row.to_vec())?).expect("write to string");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_mode_report(path: &Path, report: &ModeReport) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}
