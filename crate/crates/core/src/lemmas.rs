//! Randomized checks of the block-inverse and Sherman–Morrison identities
//! the Fisher routines rely on, against dense-inverse oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::Exec;
use crate::fisher::{block_inverse, correction_factor_forms, lemma2_bound, UnitFisherEstimate};
use crate::linalg::{dense_inverse, matmul_transb, outer, quadratic_form, Matrix, Vector};

pub const LEMMA_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaSuite {
    pub cases: usize,
    pub seed: u64,
    /// Perturbs every assembled block inverse; only for exercising the
    /// failure path.
    pub corrupt_inverse: bool,
    pub exec: Exec,
}

impl Default for LemmaSuite {
    fn default() -> Self {
        LemmaSuite { cases: 100, seed: 0, corrupt_inverse: false, exec: Exec::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub cases: usize,
    /// max |block inverse − dense inverse|
    pub block_inverse_max_dev: f64,
    /// max of E(a)ᵀ E(aaᵀ)⁻¹ E(a)
    pub bound_max: f64,
    /// max relative gap between (1 − EᵀM⁻¹E)⁻¹ and 1 + EᵀVar⁻¹E
    pub sherman_morrison_max_dev: f64,
    /// max relative gap between the two forms of k
    pub k_forms_max_dev: f64,
}

impl LemmaReport {
    pub fn lemma1_passed(&self) -> bool {
        self.block_inverse_max_dev <= LEMMA_TOL
    }

    pub fn lemma2_passed(&self) -> bool {
        self.bound_max <= 1.0 + LEMMA_TOL && self.sherman_morrison_max_dev <= LEMMA_TOL && self.k_forms_max_dev <= LEMMA_TOL
    }

    pub fn passed(&self) -> bool {
        self.lemma1_passed() && self.lemma2_passed()
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::new((0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Symmetric positive definite `B Bᵀ / n + ridge·I`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, ridge: f64) -> Matrix {
    let b = uniform(rng, n, n);
    let mut m = matmul_transb(&b, &b).unwrap().scale(1.0 / n as f64);
    m.add_to_diagonal(ridge);
    m
}

fn case_rng(seed: u64, lemma: u64, case: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(lemma << 32 | case as u64);
    rng
}

/// One block-inverse case: an SPD matrix of size 2–12, split into the
/// leading block, last column and corner.
pub fn lemma1_case(seed: u64, case: usize, corrupt: bool) -> Result<f64> {
    let mut rng = case_rng(seed, 1, case);
    let n = rng.random_range(2..=12);
    let m = random_spd(&mut rng, n, 0.5);
    let d = n - 1;
    let a = Matrix::new(d, d, (0..d).flat_map(|i| m.row(i)[..d].to_vec()).collect())?;
    let b = Vector::new((0..d).map(|i| m[(i, d)]).collect())?;
    let mut assembled = block_inverse(&a, &b, m[(d, d)])?.assemble();
    if corrupt {
        assembled[(0, 0)] += 1e-6;
    }
    Ok(assembled.max_abs_diff(&dense_inverse(&m)?))
}

/// One Sherman–Morrison case over consistent moments `M = Var + E Eᵀ`:
/// returns (bound, identity gap, k-form gap).
pub fn lemma2_case(seed: u64, case: usize) -> Result<(f64, f64, f64)> {
    let mut rng = case_rng(seed, 2, case);
    let d = rng.random_range(1..=8);
    let var = random_spd(&mut rng, d, 0.1);
    let mean_scale = rng.random_range(0.0..2.0);
    let e_q = uniform_vec(&mut rng, d, mean_scale);
    let e_p = uniform_vec(&mut rng, d, 1.0);
    let m = var.add(&outer(&e_q, &e_q))?;

    let bound = lemma2_bound(&e_q, &m)?;
    let lhs = 1.0 / (1.0 - quadratic_form(&e_q, &m, &e_q)?);
    let rhs = 1.0 + quadratic_form(&e_q, &var, &e_q)?;

    let c = rng.random_range(0.1..2.0);
    let fisher = UnitFisherEstimate::from_moments(c, e_q, m, e_p, 1);
    let k = correction_factor_forms(&fisher)?;
    Ok((bound, rel_gap(lhs, rhs), rel_gap(k.via_variance, k.via_second_moment)))
}

pub fn run_lemma_suite(suite: &LemmaSuite) -> Result<LemmaReport> {
    let l1 = suite.exec.map_range(suite.cases, |i| lemma1_case(suite.seed, i, suite.corrupt_inverse));
    let l2 = suite.exec.map_range(suite.cases, |i| lemma2_case(suite.seed, i));
    let mut report = LemmaReport {
        cases: suite.cases,
        block_inverse_max_dev: 0.0,
        bound_max: f64::NEG_INFINITY,
        sherman_morrison_max_dev: 0.0,
        k_forms_max_dev: 0.0,
    };
    for dev in l1 {
        report.block_inverse_max_dev = report.block_inverse_max_dev.max(dev?);
    }
    for r in l2 {
        let (bound, sm, k) = r?;
        report.bound_max = report.bound_max.max(bound);
        report.sherman_morrison_max_dev = report.sherman_morrison_max_dev.max(sm);
        report.k_forms_max_dev = report.k_forms_max_dev.max(k);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes_and_is_mode_independent() {
        let seq = run_lemma_suite(&LemmaSuite { exec: Exec::Sequential, ..Default::default() }).unwrap();
        let par = run_lemma_suite(&LemmaSuite { exec: Exec::Parallel, ..Default::default() }).unwrap();
        assert_eq!(seq, par);
        assert!(seq.passed(), "{seq:?}");
        assert!(seq.bound_max < 1.0);
    }

    #[test]
    fn corruption_is_detected() {
        let r = run_lemma_suite(&LemmaSuite { cases: 5, corrupt_inverse: true, ..Default::default() }).unwrap();
        assert!(!r.lemma1_passed());
        assert!(r.lemma2_passed());
    }

    #[test]
    fn cases_differ() {
        assert_ne!(lemma1_case(0, 0, false).unwrap(), lemma1_case(0, 1, false).unwrap());
    }
}
