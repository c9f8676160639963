//! Unit Fisher information and the bias-shift analysis built on it.
//!
//! For one unit with incoming activation vector `a` (bias activation
//! `a₀ = 1` handled separately) and `δ = ∂ ln p / ∂ net`, the unit Fisher
//! matrix is `F = E_p(δ² â âᵀ)` with `â = (a, 1)`. Writing
//! `q(z) ∝ δ²(z) p(z)`, it partitions as
//!
//! ```text
//!        ⎡ A   b ⎤      A = E_p(δ²) E_q(a aᵀ)
//!   F =  ⎢       ⎥      b = E_p(δ²) E_q(a)
//!        ⎣ bᵀ  c ⎦      c = E_p(δ²)
//! ```
//!
//! Everything here works on empirical moments. The routines that have an
//! algebraic twin (`s` through the Schur complement or through `Var_q(a)`,
//! the two forms of `k`, the bias-shift decomposition) check the twin and
//! fail with [`Error::IdentityViolation`] when they disagree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::{chunk_bounds, Exec};
use crate::linalg::{axpy, cholesky, outer, quadratic_form, Lu, Matrix, Vector};
use crate::network::{Network, UnitRef, EVAL_CHUNK};

/// Tolerance for the internal identity checks, relative to the magnitude of
/// the compared quantities (floored at 1).
pub const IDENTITY_TOL: f64 = 1e-9;

/// Ridge scale: `ε = RIDGE_SCALE · trace / d`.
pub const RIDGE_SCALE: f64 = 1e-8;

/// Default number of examples used for diagnostics.
pub const DEFAULT_FISHER_SAMPLES: usize = 2048;

/// `|lhs − rhs| ≤ tol · max(1, scale…)`
pub fn within(lhs: f64, rhs: f64, tol: f64, scale: &[f64]) -> bool {
    let s = scale.iter().fold(lhs.abs().max(rhs.abs()).max(1.0), |m, v| m.max(v.abs()));
    (lhs - rhs).abs() <= tol * s
}

fn check_identity(name: &'static str, lhs: f64, rhs: f64, scale: &[f64]) -> Result<()> {
    if within(lhs, rhs, IDENTITY_TOL, scale) {
        Ok(())
    } else {
        Err(Error::IdentityViolation { name, lhs, rhs })
    }
}

/// Which label δ is computed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaMode {
    /// The observed label (empirical Fisher).
    #[default]
    ObservedLabel,
    /// Labels drawn from the model's softmax (Monte Carlo true Fisher).
    ModelSampled,
}

impl std::str::FromStr for DeltaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observed" | "observed-label" => Ok(DeltaMode::ObservedLabel),
            "sampled" | "model-sampled" => Ok(DeltaMode::ModelSampled),
            _ => Err(Error::Config(format!("unknown delta mode `{s}` (observed or sampled)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherOptions {
    pub delta_mode: DeltaMode,
    /// Labels drawn per example in `ModelSampled` mode.
    pub mc_samples: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for FisherOptions {
    fn default() -> Self {
        FisherOptions { delta_mode: DeltaMode::ObservedLabel, mc_samples: 1, seed: 0, exec: Exec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitFisherEstimate {
    pub a: Matrix,
    pub b: Vector,
    pub c: f64,
    pub e_p_delta2: f64,
    pub e_q_a: Vector,
    pub e_q_aat: Matrix,
    pub e_p_a: Vector,
    pub n_samples: usize,
    /// Ridge added to `E_q(a aᵀ)` (and `c·ε` to `A`) when the raw moments
    /// were singular; zero otherwise.
    pub ridge_used: f64,
}

/// Fixed-order sums over (activation row, δ) pairs.
#[derive(Clone, Debug)]
struct MomentSums {
    n: usize,
    delta2: f64,
    a: Vec<f64>,
    delta2_a: Vec<f64>,
    delta2_aat: Matrix,
}

impl MomentSums {
    fn new(d: usize) -> Self {
        MomentSums { n: 0, delta2: 0.0, a: vec![0.0; d], delta2_a: vec![0.0; d], delta2_aat: Matrix::zeros(d, d) }
    }

    fn push(&mut self, a: &[f64], delta: f64) {
        let w = delta * delta;
        self.n += 1;
        self.delta2 += w;
        axpy(1.0, a, &mut self.a);
        if w != 0.0 {
            axpy(w, a, &mut self.delta2_a);
            for (i, &ai) in a.iter().enumerate() {
                let f = w * ai;
                if f != 0.0 {
                    axpy(f, a, self.delta2_aat.row_mut(i));
                }
            }
        }
    }

    fn merge(&mut self, other: &MomentSums) {
        self.n += other.n;
        self.delta2 += other.delta2;
        axpy(1.0, &other.a, &mut self.a);
        axpy(1.0, &other.delta2_a, &mut self.delta2_a);
        axpy(1.0, other.delta2_aat.as_slice(), self.delta2_aat.as_mut_slice());
    }
}

impl UnitFisherEstimate {
    /// Empirical estimate from incoming activations (one row per sample)
    /// and the matching δ values.
    pub fn from_samples(activations: &Matrix, deltas: &[f64]) -> Result<Self> {
        if activations.rows() != deltas.len() {
            return Err(Error::shape("UnitFisherEstimate", activations.shape(), (deltas.len(), 1)));
        }
        let mut sums = MomentSums::new(activations.cols());
        for (r, &d) in deltas.iter().enumerate() {
            sums.push(activations.row(r), d);
        }
        Self::from_sums(sums)
    }

    fn from_sums(s: MomentSums) -> Result<Self> {
        if s.n == 0 {
            return Err(Error::Config("no samples for Fisher estimate".into()));
        }
        if s.delta2 == 0.0 {
            return Err(Error::DegenerateFisher);
        }
        let n = s.n as f64;
        let e_p_delta2 = s.delta2 / n;
        let e_q_a = Vector::from_raw(s.delta2_a.iter().map(|v| v / s.delta2).collect());
        let e_q_aat = s.delta2_aat.scale(1.0 / s.delta2);
        let e_p_a = Vector::from_raw(s.a.iter().map(|v| v / n).collect());
        Ok(Self::from_moments(e_p_delta2, e_q_a, e_q_aat, e_p_a, s.n))
    }

    /// Assembles `A`, `b`, `c` from moments.
    pub fn from_moments(e_p_delta2: f64, e_q_a: Vector, e_q_aat: Matrix, e_p_a: Vector, n_samples: usize) -> Self {
        UnitFisherEstimate {
            a: e_q_aat.scale(e_p_delta2),
            b: e_q_a.scale(e_p_delta2),
            c: e_p_delta2,
            e_p_delta2,
            e_q_a,
            e_q_aat,
            e_p_a,
            n_samples,
            ridge_used: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `[[A, b], [bᵀ, c]]`, bias coordinate last.
    pub fn full_matrix(&self) -> Matrix {
        let d = self.dim();
        let mut f = Matrix::zeros(d + 1, d + 1);
        for i in 0..d {
            f.row_mut(i)[..d].copy_from_slice(self.a.row(i));
            f[(i, d)] = self.b[i];
            f[(d, i)] = self.b[i];
        }
        f[(d, d)] = self.c;
        f
    }

    /// `Var_q(a) = E_q(a aᵀ) − E_q(a) E_q(a)ᵀ`
    pub fn variance_q(&self) -> Matrix {
        self.e_q_aat.sub(&outer(&self.e_q_a, &self.e_q_a)).expect("matching shapes")
    }

    /// Adds `ε·I` to the second moment (and so to `Var_q`) and `c·ε·I` to `A`
    /// when either is singular, with `ε = 1e-8 · trace(Var_q) / d`.
    pub fn regularize_if_singular(&mut self) -> Result<()> {
        let var = self.variance_q();
        if Lu::new(&var).is_ok() && Lu::new(&self.a).is_ok() {
            return Ok(());
        }
        let d = self.dim() as f64;
        let eps = RIDGE_SCALE * var.trace() / d;
        let mut reg = self.clone();
        reg.e_q_aat.add_to_diagonal(eps);
        reg.a.add_to_diagonal(self.c * eps);
        Lu::new(&reg.variance_q())?;
        Lu::new(&reg.a)?;
        reg.ridge_used = eps;
        *self = reg;
        Ok(())
    }
}

/// Estimates the Fisher block of `unit` over `data`.
///
/// `unit.layer` must be ≥ 1 so the incoming activations are hidden units.
/// Samples with vanishing δ² stay in the sample count and simply carry no
/// weight under `q`.
pub fn estimate_unit_fisher(net: &Network, unit: UnitRef, data: &Dataset, opts: &FisherOptions) -> Result<UnitFisherEstimate> {
    net.check_unit(unit)?;
    if unit.layer == 0 {
        return Err(Error::Config("unit must be in layer >= 1 (incoming activations must be hidden units)".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("empty dataset for Fisher estimate".into()));
    }
    let labels = data.labels()?;
    let reps = match opts.delta_mode {
        DeltaMode::ObservedLabel => 1,
        DeltaMode::ModelSampled => opts.mc_samples.max(1),
    };
    let d = net.layers[unit.layer].fan_in();
    let chunks = chunk_bounds(data.len(), EVAL_CHUNK);
    let parts = opts.exec.map(&chunks, |&(s, e)| -> Result<MomentSums> {
        let trace = net.forward(&data.inputs.row_range(s, e))?;
        let incoming = trace.incoming(unit.layer);
        let mut sums = MomentSums::new(d);
        for rep in 0..reps {
            let chunk_labels: Vec<usize> = match opts.delta_mode {
                DeltaMode::ObservedLabel => labels[s..e].to_vec(),
                DeltaMode::ModelSampled => {
                    let out = trace.output();
                    (0..e - s).map(|r| sample_label(out.row(r), opts.seed, s + r, rep)).collect()
                }
            };
            let deltas = net.logprob_deltas_from(&trace, &chunk_labels, unit.layer)?;
            let delta = &deltas[unit.layer];
            for r in 0..e - s {
                sums.push(incoming.row(r), delta[(r, unit.index)]);
            }
        }
        Ok(sums)
    });
    let mut total = MomentSums::new(d);
    for p in parts {
        total.merge(&p?);
    }
    let mut est = UnitFisherEstimate::from_sums(total)?;
    est.regularize_if_singular()?;
    Ok(est)
}

/// Draws a class from `probs` with a stream keyed by (seed, example, rep),
/// independent of chunking and thread scheduling.
fn sample_label(probs: &[f64], seed: u64, example: usize, rep: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (example as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(rep as u64);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// `[[A, b], [bᵀ, c]]⁻¹ = [[K, u], [uᵀ, s]]`
#[derive(Clone, Debug, PartialEq)]
pub struct BlockInverse {
    pub k: Matrix,
    pub u: Vector,
    pub s: f64,
}

impl BlockInverse {
    pub fn assemble(&self) -> Matrix {
        let d = self.u.len();
        let mut m = Matrix::zeros(d + 1, d + 1);
        for i in 0..d {
            m.row_mut(i)[..d].copy_from_slice(self.k.row(i));
            m[(i, d)] = self.u[i];
            m[(d, i)] = self.u[i];
        }
        m[(d, d)] = self.s;
        m
    }
}

/// Schur complement `c − bᵀA⁻¹b`, rejected unless clearly positive
/// relative to `c`.
fn schur_denominator(c: f64, b: &Vector, a_inv_b: &Vector) -> Result<f64> {
    let denom = c - b.dot(a_inv_b);
    // written so that NaN is rejected too
    let positive = c > 0.0 && denom > 1e-12 * c.abs();
    if !positive {
        return Err(Error::NotPositiveDefinite { denominator: denom });
    }
    Ok(denom)
}

/// Inverse of a positive definite matrix given in block form, via
/// `s = (c − bᵀA⁻¹b)⁻¹`, `u = −s A⁻¹ b`, `K = A⁻¹ + u s⁻¹ uᵀ`.
pub fn block_inverse(a: &Matrix, b: &Vector, c: f64) -> Result<BlockInverse> {
    if !a.is_square() || a.rows() != b.len() {
        return Err(Error::shape("block_inverse", a.shape(), (b.len(), 1)));
    }
    let a_inv = Lu::new(a)?.inverse();
    let a_inv_b = a_inv.mul_vec(b)?;
    let s = 1.0 / schur_denominator(c, b, &a_inv_b)?;
    let u = a_inv_b.scale(-s);
    let mut k = a_inv;
    for i in 0..u.len() {
        axpy(u[i] / s, u.as_slice(), k.row_mut(i));
    }
    Ok(BlockInverse { k, u, s })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaturalGradientUpdate {
    pub delta_w: Vector,
    pub delta_w0: f64,
    pub s: f64,
}

impl NaturalGradientUpdate {
    /// `(Δwᵀ, Δw₀)ᵀ` as one vector, bias last.
    pub fn stacked(&self) -> Vector {
        let mut v = self.delta_w.clone().into_vec();
        v.push(self.delta_w0);
        Vector::from_raw(v)
    }
}

fn check_gradient(fisher: &UnitFisherEstimate, g: &Vector) -> Result<()> {
    if g.len() != fisher.dim() {
        return Err(Error::shape("unit gradient", (fisher.dim(), fisher.dim()), (g.len(), 1)));
    }
    Ok(())
}

/// `Δw₀ = s (g₀ − bᵀA⁻¹g)`, `Δw = A⁻¹(g − Δw₀ b)`, computed with solves
/// against one factorization of `A`.
pub fn natural_gradient_update(fisher: &UnitFisherEstimate, g: &Vector, g0: f64) -> Result<NaturalGradientUpdate> {
    check_gradient(fisher, g)?;
    let lu = Lu::new(&fisher.a)?;
    let a_inv_g = lu.solve(g)?;
    let a_inv_b = lu.solve(&fisher.b)?;
    let s = 1.0 / schur_denominator(fisher.c, &fisher.b, &a_inv_b)?;
    let delta_w0 = s * (g0 - fisher.b.dot(&a_inv_g));
    let delta_w = a_inv_g.sub(&a_inv_b.scale(delta_w0));
    Ok(NaturalGradientUpdate { delta_w, delta_w0, s })
}

/// `s = E_p(δ²)⁻¹ (1 + E_q(a)ᵀ Var_q(a)⁻¹ E_q(a))`
pub fn s_via_variance(fisher: &UnitFisherEstimate) -> Result<f64> {
    let q = quadratic_form(&fisher.e_q_a, &fisher.variance_q(), &fisher.e_q_a)?;
    Ok((1.0 + q) / fisher.e_p_delta2)
}

/// Both algebraic forms of the correction factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionForms {
    /// `1 + (E_q(a) − E_p(a))ᵀ Var_q(a)⁻¹ E_q(a)`
    pub via_variance: f64,
    /// `(1 − E_qᵀ E_q(aaᵀ)⁻¹ E_q)⁻¹ (1 − E_pᵀ E_q(aaᵀ)⁻¹ E_q)`
    pub via_second_moment: f64,
}

pub fn correction_factor_forms(fisher: &UnitFisherEstimate) -> Result<CorrectionForms> {
    let var_inv_eq = Lu::new(&fisher.variance_q())?.solve(&fisher.e_q_a)?;
    let via_variance = 1.0 + fisher.e_q_a.sub(&fisher.e_p_a).dot(&var_inv_eq);
    let m_inv_eq = Lu::new(&fisher.e_q_aat)?.solve(&fisher.e_q_a)?;
    let via_second_moment = (1.0 - fisher.e_p_a.dot(&m_inv_eq)) / (1.0 - fisher.e_q_a.dot(&m_inv_eq));
    Ok(CorrectionForms { via_variance, via_second_moment })
}

/// The correction factor `k`; both forms must agree.
pub fn correction_factor_k(fisher: &UnitFisherEstimate) -> Result<f64> {
    if fisher.e_q_a.max_abs() == 0.0 {
        return Ok(1.0);
    }
    let forms = correction_factor_forms(fisher)?;
    check_identity("k variance form = k second-moment form", forms.via_variance, forms.via_second_moment, &[])?;
    Ok(forms.via_variance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasShiftReport {
    /// `E_p(a)ᵀ A⁻¹ g + c⁻¹ g₀`: the shift without bias-shift correction.
    pub shift_plain: f64,
    /// `(E_p(a)ᵀ, 1) (Δwᵀ, Δw₀)ᵀ` under the unit natural gradient.
    pub shift_natural: f64,
    pub k: f64,
    /// `k · E_q(a)`, the effective correction of the incoming mean.
    pub mean_correction: Vector,
    /// `(E_p(a) − k E_q(a))ᵀ A⁻¹ g + k c⁻¹ g₀`, equal to `shift_natural`.
    pub shift_decomposed: f64,
}

pub fn bias_shift_report(fisher: &UnitFisherEstimate, g: &Vector, g0: f64) -> Result<BiasShiftReport> {
    check_gradient(fisher, g)?;
    let a_inv_g = Lu::new(&fisher.a)?.solve(g)?;
    let mean_term = fisher.e_p_a.dot(&a_inv_g);
    let bias_term = g0 / fisher.c;
    let shift_plain = mean_term + bias_term;

    let update = natural_gradient_update(fisher, g, g0)?;
    let shift_natural = fisher.e_p_a.dot(&update.delta_w) + update.delta_w0;

    let k = correction_factor_k(fisher)?;
    let mean_correction = fisher.e_q_a.scale(k);
    let correction_term = mean_correction.dot(&a_inv_g);
    let shift_decomposed = (mean_term - correction_term) + k * bias_term;
    check_identity(
        "bias-shift decomposition",
        shift_natural,
        shift_decomposed,
        &[mean_term, correction_term, k * bias_term],
    )?;
    Ok(BiasShiftReport { shift_plain, shift_natural, k, mean_correction, shift_decomposed })
}

/// `E(a)ᵀ E(a aᵀ)⁻¹ E(a)`, which is at most 1 for consistent moments.
pub fn lemma2_bound(e_a: &Vector, e_aat: &Matrix) -> Result<f64> {
    if !e_aat.is_square() || e_aat.rows() != e_a.len() {
        return Err(Error::shape("lemma2_bound", e_aat.shape(), (e_a.len(), 1)));
    }
    let var = e_aat.sub(&outer(e_a, e_a))?;
    if cholesky(&var).is_err() {
        // admit singular-but-PSD variance up to rounding
        let mut relaxed = var;
        relaxed.add_to_diagonal(1e-12 * (1.0 + e_aat.trace()));
        cholesky(&relaxed).map_err(|_| Error::MomentConsistency)?;
    }
    quadratic_form(e_a, e_aat, e_a)
}

/// JSON record for one unit's bias-shift analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasShiftRecord {
    pub unit: usize,
    pub layer: usize,
    pub k: f64,
    pub shift_plain: f64,
    pub shift_natural: f64,
    pub e_p_delta2: f64,
    pub n_samples: usize,
    pub ridge_used: f64,
}

impl BiasShiftRecord {
    pub fn new(unit: UnitRef, fisher: &UnitFisherEstimate, report: &BiasShiftReport) -> Self {
        BiasShiftRecord {
            unit: unit.index,
            layer: unit.layer,
            k: report.k,
            shift_plain: report.shift_plain,
            shift_natural: report.shift_natural,
            e_p_delta2: fisher.e_p_delta2,
            n_samples: fisher.n_samples,
            ridge_used: fisher.ridge_used,
        }
    }
}
