//! Site-pattern likelihoods under CIR-distributed rates: the exact closed
//! form for three-leaf star trees and a Monte Carlo estimator for general
//! trees.
//!
//! The exact form expands each branch's transition matrix in the shared
//! eigenbasis; because all three branches emanate from one root carrying one
//! rate r0, the product of the three start-conditioned mgfs is
//! Psi_i Psi_j Psi_k e^{-r0 (Xi_i + Xi_j + Xi_k)} and the gamma root-rate
//! integral closes as (omega/(omega + sum Xi))^nu.
//!
//! The Monte Carlo estimator samples node rates from the prior process
//! (stationary at the root, transition law down each branch) and, given the
//! rates, runs Felsenstein pruning with bridge-conditioned branch matrices.

use crate::cir::CirParams;
use crate::error::{Error, Result};
use crate::mgf;
use crate::phylo::alignment::Alignment;
use crate::phylo::tree::Tree;
use crate::subst::Eigensystem;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Exact likelihood of one site pattern on a three-leaf star tree, root
/// state marginalized against the substitution stationary distribution.
pub fn three_taxa_likelihood(
    sys: &Eigensystem,
    p: &CirParams,
    times: [f64; 3],
    pattern: [usize; 3],
) -> Result<f64> {
    let weights = ThreeTaxaWeights::new(sys, p, times, pattern)?;
    let pi = sys.pi();
    Ok((0..sys.n()).map(|x0| pi[x0] * weights.given_root(x0)).sum())
}

/// Exact likelihood of one site pattern on a three-leaf star tree, given the
/// root state.
pub fn three_taxa_likelihood_given_root(
    sys: &Eigensystem,
    p: &CirParams,
    times: [f64; 3],
    pattern: [usize; 3],
    root_state: usize,
) -> Result<f64> {
    if root_state >= sys.n() {
        return Err(Error::input(format!(
            "root state {root_state} outside alphabet of size {}",
            sys.n()
        )));
    }
    let weights = ThreeTaxaWeights::new(sys, p, times, pattern)?;
    Ok(weights.given_root(root_state))
}

/// Per-branch spectral weights shared by the marginal and conditional forms.
struct ThreeTaxaWeights<'a> {
    sys: &'a Eigensystem,
    pattern: [usize; 3],
    psi: [Vec<f64>; 3],
    xi: [Vec<f64>; 3],
    shape: f64,
    omega: f64,
}

impl<'a> ThreeTaxaWeights<'a> {
    fn new(
        sys: &'a Eigensystem,
        p: &CirParams,
        times: [f64; 3],
        pattern: [usize; 3],
    ) -> Result<Self> {
        let n = sys.n();
        for (k, &x) in pattern.iter().enumerate() {
            if x >= n {
                return Err(Error::input(format!(
                    "leaf state {x} at position {k} outside alphabet of size {n}"
                )));
            }
        }
        for &t in &times {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::domain(format!(
                    "branch lengths must be positive, got {t}"
                )));
            }
        }
        let mut psi: [Vec<f64>; 3] = Default::default();
        let mut xi: [Vec<f64>; 3] = Default::default();
        for m in 0..3 {
            psi[m] = sys
                .lambdas()
                .iter()
                .map(|&lam| mgf::psi(p, lam, times[m]))
                .collect::<Result<_>>()?;
            xi[m] = sys
                .lambdas()
                .iter()
                .map(|&lam| mgf::xi(p, lam, times[m]))
                .collect::<Result<_>>()?;
        }
        Ok(ThreeTaxaWeights {
            sys,
            pattern,
            psi,
            xi,
            shape: p.stationary_shape(),
            omega: p.stationary_rate(),
        })
    }

    fn given_root(&self, x0: usize) -> f64 {
        let n = self.sys.n();
        let right = self.sys.right();
        let left = self.sys.left();
        let [x1, x2, x3] = self.pattern;
        let mut total = 0.0;
        for i in 0..n {
            let ci = right[(x0, i)] * left[(i, x1)] * self.psi[0][i];
            if ci == 0.0 {
                continue;
            }
            for j in 0..n {
                let cj = right[(x0, j)] * left[(j, x2)] * self.psi[1][j];
                if cj == 0.0 {
                    continue;
                }
                let xi_ij = self.xi[0][i] + self.xi[1][j];
                for k in 0..n {
                    let ck = right[(x0, k)] * left[(k, x3)] * self.psi[2][k];
                    let xi_sum = xi_ij + self.xi[2][k];
                    total += ci * cj * ck
                        * (self.omega / (self.omega + xi_sum)).powf(self.shape);
                }
            }
        }
        total
    }
}

/// One site's Monte Carlo likelihood estimate.
#[derive(Debug, Clone, Copy)]
pub struct SiteEstimate {
    pub mean: f64,
    pub std_err: f64,
    /// Samples discarded because an endpoint rate collapsed to zero on a
    /// positive-length branch (resampled, not silently kept).
    pub rejected: u64,
}

/// Monte Carlo per-site likelihoods on an arbitrary rooted tree.
///
/// Each site draws from an independent random stream keyed by the site
/// index, so estimates are deterministic for a fixed seed regardless of how
/// sites are scheduled across threads, and a site's estimate is unaffected
/// by the other columns in the alignment.
pub fn mc_tree_likelihood(
    sys: &Eigensystem,
    p: &CirParams,
    tree: &Tree,
    aln: &Alignment,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<SiteEstimate>> {
    if n_samples < 100 {
        return Err(Error::invalid(format!(
            "n_samples must be at least 100, got {n_samples}"
        )));
    }
    let leaves = tree.leaves();
    if leaves.len() != aln.n_taxa() {
        return Err(Error::input(format!(
            "tree has {} leaves but alignment has {} taxa",
            leaves.len(),
            aln.n_taxa()
        )));
    }
    // leaf node -> alignment row.
    let mut leaf_rows = Vec::with_capacity(leaves.len());
    for &leaf in &leaves {
        let label = tree.node(leaf).label.as_deref().expect("leaves are labeled");
        let row = aln.taxon_index(label).ok_or_else(|| {
            Error::input(format!("tree leaf {label:?} is missing from the alignment"))
        })?;
        leaf_rows.push((leaf, row));
    }

    let postorder = tree.postorder();
    let evaluator = SampleEvaluator {
        sys,
        p,
        tree,
        postorder: &postorder,
        leaf_rows: &leaf_rows,
    };

    (0..aln.n_sites())
        .into_par_iter()
        .map(|site| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(site as u64);
            let column = aln.column(site);
            evaluator.estimate(&column, n_samples, &mut rng)
        })
        .collect()
}

struct SampleEvaluator<'a> {
    sys: &'a Eigensystem,
    p: &'a CirParams,
    tree: &'a Tree,
    postorder: &'a [usize],
    leaf_rows: &'a [(usize, usize)],
}

impl SampleEvaluator<'_> {
    fn estimate(
        &self,
        column: &[Option<usize>],
        n_samples: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<SiteEstimate> {
        let n_states = self.sys.n();
        let n_nodes = self.tree.len();

        // Leaf partial vectors are fixed per column.
        let mut partials: Vec<DVector<f64>> = vec![DVector::zeros(n_states); n_nodes];
        for &(leaf, row) in self.leaf_rows {
            partials[leaf] = match column[row] {
                Some(state) => {
                    let mut v = DVector::zeros(n_states);
                    v[state] = 1.0;
                    v
                }
                // Gap: marginalize the leaf by an all-ones partial.
                None => DVector::from_element(n_states, 1.0),
            };
        }

        let laws: Vec<_> = (0..n_nodes)
            .map(|v| {
                let t = self.tree.node(v).branch_length;
                if self.tree.node(v).parent.is_some() && t > 0.0 {
                    Some(self.p.transition_law(t))
                } else {
                    None
                }
            })
            .collect();

        let mut rates = vec![0.0f64; n_nodes];
        let mut mean = 0.0f64;
        let mut m2 = 0.0f64;
        let mut rejected: u64 = 0;

        for sample in 1..=n_samples {
            // Node rates from the prior process, rejecting draws that pin a
            // positive-length branch endpoint at zero (where the bridge
            // kernel is undefined). Zero draws only arise from underflow in
            // the boundary-attainable regime, so retries are rare.
            let mut attempts = 0;
            loop {
                rates[self.tree.root()] = self.p.stationary_sample(rng);
                let mut ok = true;
                for &v in self.postorder.iter().rev() {
                    if let Some(parent) = self.tree.node(v).parent {
                        rates[v] = match &laws[v] {
                            Some(law) => law.sample(rates[parent], rng),
                            None => rates[parent],
                        };
                        if laws[v].is_some() && (rates[v] == 0.0 || rates[parent] == 0.0) {
                            ok = false;
                        }
                    }
                }
                if ok {
                    break;
                }
                rejected += 1;
                attempts += 1;
                if attempts > 1000 {
                    return Err(Error::numerical(
                        "rate sampling rejected 1000 consecutive draws; \
                         rates are collapsing to the boundary",
                    ));
                }
            }

            // Felsenstein pruning with bridge-conditioned branch matrices.
            let mut value = 0.0;
            for &v in self.postorder {
                if self.tree.is_leaf(v) {
                    continue;
                }
                let mut partial = DVector::from_element(n_states, 1.0);
                for &c in &self.tree.node(v).children {
                    let contrib = if laws[c].is_some() {
                        let t = self.tree.node(c).branch_length;
                        let m = self
                            .sys
                            .transition_cir_bridge(self.p, rates[v], rates[c], t)?;
                        m * &partials[c]
                    } else {
                        partials[c].clone()
                    };
                    partial.component_mul_assign(&contrib);
                }
                if v == self.tree.root() {
                    value = self
                        .sys
                        .pi()
                        .iter()
                        .zip(partial.iter())
                        .map(|(pi, l)| pi * l)
                        .sum();
                } else {
                    partials[v] = partial;
                }
            }

            let delta = value - mean;
            mean += delta / sample as f64;
            m2 += delta * (value - mean);
        }

        let n = n_samples as f64;
        let std_err = (m2 / (n - 1.0) / n).sqrt();
        Ok(SiteEstimate {
            mean,
            std_err,
            rejected,
        })
    }
}

/// Strict-clock likelihood of a pattern on a star tree: the rate is constant
/// and known, so branches multiply independently. Used as a degenerate-limit
/// oracle in tests and exposed for the CLI's constant-rate mode.
pub fn star_constant_rate_likelihood(
    sys: &Eigensystem,
    rate: f64,
    times: &[f64],
    pattern: &[usize],
) -> Result<f64> {
    if times.len() != pattern.len() {
        return Err(Error::input(format!(
            "{} branch lengths but {} leaf states",
            times.len(),
            pattern.len()
        )));
    }
    let mats = times
        .iter()
        .map(|&t| sys.transition_constant_rate(rate, t))
        .collect::<Result<Vec<DMatrix<f64>>>>()?;
    let pi = sys.pi();
    let mut total = 0.0;
    for x0 in 0..sys.n() {
        let mut term = pi[x0];
        for (m, &x) in mats.iter().zip(pattern) {
            term *= m[(x0, x)];
        }
        total += term;
    }
    Ok(total)
}
