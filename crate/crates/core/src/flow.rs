//! Temperature-conditional coupling flow built from rational-quadratic
//! splines.
//!
//! Each layer splits the coordinates into a pass-through set and a
//! transformed set. A dense SiLU network reads the pass-through coordinates
//! plus one temperature feature (`ln T`) and emits `3K - 1` raw spline
//! parameters per transformed coordinate. Layers come in pairs sharing one
//! seeded permutation of the coordinates: the first layer of the pair
//! transforms the second half of the permuted order, the second layer the
//! first half. Coordinates keep their positions between layers, so a
//! freshly initialised flow (zero output layers) is the identity.
//!
//! ```
//! use flowvat::flow::{FlowArchitecture, FlowModel};
//! use flowvat::mathcore::RngStream;
//!
//! let arch = FlowArchitecture::desk(2);
//! let model = FlowModel::new(arch, &mut RngStream::new(0, 0)).unwrap();
//! let (theta, logdet) = model.flow_forward(&[0.3, -1.0], 2.0).unwrap();
//! assert!((theta[0] - 0.3).abs() < 1e-12 && logdet.abs() < 1e-12);
//! ```

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffgraph::{Graph, ParamLayout, ParamVector, Segment, Var};
use crate::mathcore::RngStream;
use crate::spline::{raw_param_count, spline_forward, spline_inverse};
use crate::tempering::{tempered_base_logpdf, tempered_base_logpdf_graph, tempered_base_sample};
use crate::{Error, Result};

/// Rows per inference chunk for batched evaluation.
const CHUNK: usize = 4096;

/// Shape of a flow: dimension, depth, conditioner size and spline setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowArchitecture {
    pub dim: usize,
    pub layers: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub bins: usize,
    pub half_width: f64,
    /// When false the conditioner's temperature feature is held at 0.
    pub conditional: bool,
    pub permutation_seed: u64,
}

impl FlowArchitecture {
    /// 6 layers, conditioners with 2 hidden layers of 128 units, 16 bins on
    /// `[-8, 8]`.
    pub fn desk(dim: usize) -> Self {
        Self {
            dim,
            layers: 6,
            hidden_layers: 2,
            width: 128,
            bins: 16,
            half_width: 8.0,
            conditional: true,
            permutation_seed: 0,
        }
    }

    /// 10 layers, conditioners with 5 hidden layers of 1024 units.
    pub fn paper(dim: usize) -> Self {
        Self {
            layers: 10,
            hidden_layers: 5,
            width: 1024,
            ..Self::desk(dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.dim == 0 {
            problems.push("flow dim must be at least 1".to_string());
        }
        if self.layers == 0 {
            problems.push("flow needs at least one layer".to_string());
        }
        if self.dim >= 2 && self.layers < 2 {
            problems.push("flows with dim >= 2 need at least two layers to transform every coordinate".to_string());
        }
        if self.width == 0 {
            problems.push("conditioner width must be positive".to_string());
        }
        if self.bins < 2 {
            problems.push("spline needs at least two bins".to_string());
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            problems.push(format!("spline half width {} must be positive", self.half_width));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

#[derive(Clone, Debug)]
struct Dense {
    w: Segment,
    b: Segment,
}

#[derive(Clone, Debug)]
struct CouplingLayer {
    pass: Vec<usize>,
    transform: Vec<usize>,
    /// Column `c` of the output is column `assemble[c]` of `[x | y]`.
    assemble: Vec<usize>,
    net: Vec<Dense>,
}

fn plan_layers(arch: &FlowArchitecture) -> Vec<(Vec<usize>, Vec<usize>)> {
    let d = arch.dim;
    (0..arch.layers)
        .map(|l| {
            if d == 1 {
                return (Vec::new(), vec![0]);
            }
            let mut perm: Vec<usize> = (0..d).collect();
            perm.shuffle(&mut RngStream::new(arch.permutation_seed, (l / 2) as u64));
            let h = d / 2;
            let (first, second) = perm.split_at(h);
            let (mut pass, mut transform) = if l % 2 == 0 {
                (first.to_vec(), second.to_vec())
            } else {
                (second.to_vec(), first.to_vec())
            };
            pass.sort_unstable();
            transform.sort_unstable();
            (pass, transform)
        })
        .collect()
}

/// A coupling flow together with its parameter vector.
#[derive(Clone, Debug)]
pub struct FlowModel {
    arch: FlowArchitecture,
    layers: Vec<CouplingLayer>,
    params: ParamVector,
}

impl FlowModel {
    /// Builds the flow with uniform `±1/sqrt(fan_in)` hidden weights and
    /// zero output layers.
    pub fn new(arch: FlowArchitecture, rng: &mut RngStream) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let segments: Vec<(Segment, bool)> = model
            .layers
            .iter()
            .flat_map(|layer| {
                let last = layer.net.len() - 1;
                layer
                    .net
                    .iter()
                    .enumerate()
                    .flat_map(move |(i, d)| [(d.w.clone(), i == last), (d.b.clone(), i == last)])
            })
            .collect();
        for (seg, is_output) in segments {
            if is_output {
                continue;
            }
            let fan_in = model.fan_in(&seg);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in model.params.segment_values_mut(&seg) {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    /// All parameters zero.
    pub fn zeros(arch: FlowArchitecture) -> Result<Self> {
        arch.validate()?;
        let n_raw = raw_param_count(arch.bins);
        let mut layout = ParamLayout::new();
        let layers = plan_layers(&arch)
            .into_iter()
            .enumerate()
            .map(|(l, (pass, transform))| {
                let d = arch.dim;
                let mut assemble: Vec<usize> = (0..d).collect();
                for (j, &c) in transform.iter().enumerate() {
                    assemble[c] = d + j;
                }
                let mut fan_in = pass.len() + 1;
                let mut net = Vec::with_capacity(arch.hidden_layers + 1);
                for h in 0..arch.hidden_layers {
                    net.push(Dense {
                        w: layout.push(format!("layer{l}.hidden{h}.w"), fan_in, arch.width),
                        b: layout.push(format!("layer{l}.hidden{h}.b"), 1, arch.width),
                    });
                    fan_in = arch.width;
                }
                let out = transform.len() * n_raw;
                net.push(Dense {
                    w: layout.push(format!("layer{l}.out.w"), fan_in, out),
                    b: layout.push(format!("layer{l}.out.b"), 1, out),
                });
                CouplingLayer {
                    pass,
                    transform,
                    assemble,
                    net,
                }
            })
            .collect();
        Ok(Self {
            arch,
            layers,
            params: ParamVector::zeros(layout),
        })
    }

    fn fan_in(&self, seg: &Segment) -> usize {
        if seg.name.ends_with(".b") {
            let w_name = format!("{}w", &seg.name[..seg.name.len() - 1]);
            self.params.layout().find(&w_name).map_or(1, |w| w.rows)
        } else {
            seg.rows
        }
    }

    pub fn architecture(&self) -> &FlowArchitecture {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.arch.dim
    }

    pub fn params(&self) -> &[f64] {
        self.params.values()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.params.values_mut()
    }

    pub fn layout(&self) -> &ParamLayout {
        self.params.layout()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: values.len(),
            });
        }
        self.params.values_mut().copy_from_slice(values);
        Ok(())
    }

    /// Pass-through and transformed coordinates of each layer.
    pub fn masks(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        self.layers.iter().map(|l| (l.pass.clone(), l.transform.clone())).collect()
    }

    /// Conditioner feature for temperature `t`.
    pub fn context_feature(&self, t: f64) -> f64 {
        if self.arch.conditional {
            t.ln()
        } else {
            0.0
        }
    }

    /// Column of conditioner features, one per row.
    pub fn context_column(&self, g: &mut Graph, temps: &[f64]) -> Var {
        let feats: Vec<f64> = temps.iter().map(|&t| self.context_feature(t)).collect();
        g.column(&feats)
    }

    fn raw_spline_params(&self, g: &mut Graph, layer: &CouplingLayer, x: Var, ctx: Var) -> Var {
        let n = g.shape(x).0;
        let inp = if layer.pass.is_empty() {
            ctx
        } else {
            let pass = g.select_cols(x, &layer.pass);
            g.concat_cols(&[pass, ctx])
        };
        let last = layer.net.len() - 1;
        let mut h = inp;
        for (i, d) in layer.net.iter().enumerate() {
            let w = g.param(d.w.offset, d.w.rows, d.w.cols);
            let b = g.param(d.b.offset, d.b.rows, d.b.cols);
            let z = g.matmul(h, w);
            let z = g.add(z, b);
            h = if i == last { z } else { g.silu(z) };
        }
        g.reshape(h, n * layer.transform.len(), raw_param_count(self.arch.bins))
    }

    fn apply_layer(&self, g: &mut Graph, layer: &CouplingLayer, x: Var, ctx: Var, inverse: bool) -> (Var, Var) {
        let n = g.shape(x).0;
        let m = layer.transform.len();
        let raw = self.raw_spline_params(g, layer, x, ctx);
        let xt = g.select_cols(x, &layer.transform);
        let xt = g.reshape(xt, n * m, 1);
        let (y, ld) = if inverse {
            spline_inverse(g, xt, raw, self.arch.half_width, self.arch.bins)
        } else {
            spline_forward(g, xt, raw, self.arch.half_width, self.arch.bins)
        };
        let y = g.reshape(y, n, m);
        let ld = g.reshape(ld, n, m);
        let ld = g.sum_cols(ld);
        let both = g.concat_cols(&[x, y]);
        (g.select_cols(both, &layer.assemble), ld)
    }

    /// Records `theta = f(z; T)` for a batch (`z` is `N x d`, `ctx` is
    /// `N x 1`). Returns `theta` and the per-row `ln |det df/dz|`.
    pub fn forward_graph(&self, g: &mut Graph, z: Var, ctx: Var) -> (Var, Var) {
        let n = g.shape(z).0;
        let mut x = z;
        let mut total = g.constant(n, 1, 0.0);
        for layer in &self.layers {
            let (y, ld) = self.apply_layer(g, layer, x, ctx, false);
            x = y;
            total = g.add(total, ld);
        }
        (x, total)
    }

    /// Records `z = f^{-1}(theta; T)` and the per-row `ln |det df^{-1}/dtheta|`.
    pub fn inverse_graph(&self, g: &mut Graph, theta: Var, ctx: Var) -> (Var, Var) {
        let n = g.shape(theta).0;
        let mut x = theta;
        let mut total = g.constant(n, 1, 0.0);
        for layer in self.layers.iter().rev() {
            let (y, ld) = self.apply_layer(g, layer, x, ctx, true);
            x = y;
            total = g.add(total, ld);
        }
        (x, total)
    }

    /// Per-row flow log-density at per-row temperatures.
    pub fn log_prob_graph(&self, g: &mut Graph, theta: Var, temps: &[f64]) -> Var {
        let ctx = self.context_column(g, temps);
        let (z, ld) = self.inverse_graph(g, theta, ctx);
        let base = tempered_base_logpdf_graph(g, z, temps);
        g.add(base, ld)
    }

    fn check_batch(&self, x: &Array2<f64>, temps: &[f64]) -> Result<()> {
        if x.ncols() != self.arch.dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.dim,
                got: x.ncols(),
            });
        }
        if temps.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: temps.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        if let Some(t) = temps.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::Invalid(format!("temperature {t} must be positive and finite")));
        }
        Ok(())
    }

    fn map_batch(&self, x: &Array2<f64>, temps: &[f64], inverse: bool) -> Result<(Array2<f64>, Vec<f64>)> {
        self.check_batch(x, temps)?;
        let mut out = Array2::zeros(x.raw_dim());
        let mut lds = Vec::with_capacity(x.nrows());
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + CHUNK).min(x.nrows());
            let mut g = Graph::inference(self.params());
            let xv = g.input(x.slice(s![start..end, ..]).to_owned());
            let ctx = self.context_column(&mut g, &temps[start..end]);
            let (y, ld) = if inverse {
                self.inverse_graph(&mut g, xv, ctx)
            } else {
                self.forward_graph(&mut g, xv, ctx)
            };
            g.check_finite()?;
            out.slice_mut(s![start..end, ..]).assign(g.value(y));
            lds.extend(g.value(ld).iter().copied());
            start = end;
        }
        Ok((out, lds))
    }

    /// Forward map of every row at per-row temperatures.
    pub fn flow_forward_batch(&self, z: &Array2<f64>, temps: &[f64]) -> Result<(Array2<f64>, Vec<f64>)> {
        self.map_batch(z, temps, false)
    }

    /// Inverse map of every row at per-row temperatures.
    pub fn flow_inverse_batch(&self, theta: &Array2<f64>, temps: &[f64]) -> Result<(Array2<f64>, Vec<f64>)> {
        self.map_batch(theta, temps, true)
    }

    pub fn flow_forward(&self, z: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        let (y, ld) = self.flow_forward_batch(&row(z), &[t])?;
        Ok((y.into_raw_vec_and_offset().0, ld[0]))
    }

    pub fn flow_inverse(&self, theta: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        let (z, ld) = self.flow_inverse_batch(&row(theta), &[t])?;
        Ok((z.into_raw_vec_and_offset().0, ld[0]))
    }

    /// Normalized log-density of the flow's sampling distribution at
    /// temperature `t`, for every row of `theta`.
    pub fn log_prob_batch(&self, theta: &Array2<f64>, t: f64) -> Result<Vec<f64>> {
        let temps = vec![t; theta.nrows()];
        let (z, ld) = self.flow_inverse_batch(theta, &temps)?;
        Ok(z.rows()
            .into_iter()
            .zip(ld)
            .map(|(zr, l)| tempered_base_logpdf(zr.as_slice().expect("contiguous"), t) + l)
            .collect())
    }

    pub fn log_prob(&self, theta: &[f64], t: f64) -> Result<f64> {
        Ok(self.log_prob_batch(&row(theta), t)?[0])
    }

    /// Draws `n` samples at temperature `t` with their log-densities.
    pub fn sample(&self, rng: &mut RngStream, n: usize, t: f64) -> Result<(Array2<f64>, Vec<f64>)> {
        if n == 0 {
            return Err(Error::EmptyInput("sample count"));
        }
        let z = tempered_base_sample(rng, self.arch.dim, t, n)?;
        let (theta, ld) = self.flow_forward_batch(&z, &vec![t; n])?;
        let lp = z
            .rows()
            .into_iter()
            .zip(ld)
            .map(|(zr, l)| tempered_base_logpdf(zr.as_slice().expect("contiguous"), t) - l)
            .collect();
        Ok((theta, lp))
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}
