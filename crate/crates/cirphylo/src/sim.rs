//! Forward simulation: CIR rate paths, Cox-process substitution counts by
//! thinning, and sequence generation down a tree. These simulators are the
//! independent oracles against which every closed form in the crate is
//! checked.

use crate::cir::{empirical_dispersion, CirParams, DispersionEstimate};
use crate::error::{Error, Result};
use crate::phylo::alignment::Alignment;
use crate::phylo::tree::Tree;
use crate::subst::Eigensystem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

/// Discretization used by `simulate_path`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathScheme {
    /// Steps through the exact transition law; grid-point values are
    /// distributionally exact at any step size.
    Exact,
    /// Full-truncation Euler-Maruyama: the state may go negative but enters
    /// drift and diffusion clipped at zero. For functionals of the whole
    /// path.
    EulerFullTruncation,
}

/// A rate path on a uniform grid and its integrated rate.
#[derive(Debug, Clone)]
pub struct RatePath {
    /// Actual grid step (the requested dt rounded so the grid ends at t).
    pub dt: f64,
    /// Rate values at 0, dt, ..., t; all nonnegative.
    pub rates: Vec<f64>,
    /// Trapezoidal integral of the stored values.
    pub tau: f64,
}

/// Simulates the rate diffusion from r0 over [0, t] on a grid of
/// approximately t/dt steps.
pub fn simulate_path<R: Rng + ?Sized>(
    p: &CirParams,
    r0: f64,
    t: f64,
    dt: f64,
    scheme: PathScheme,
    rng: &mut R,
) -> Result<RatePath> {
    if !r0.is_finite() || r0 < 0.0 {
        return Err(Error::domain(format!(
            "initial rate must be nonnegative, got {r0}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    if !(t >= dt && t.is_finite()) {
        return Err(Error::domain(format!(
            "horizon {t} must be at least one step dt = {dt}"
        )));
    }
    let n_steps = (t / dt).round().max(1.0) as usize;
    let h = t / n_steps as f64;
    let mut rates = Vec::with_capacity(n_steps + 1);
    rates.push(r0);
    match scheme {
        PathScheme::Exact => {
            let law = p.transition_law(h);
            let mut r = r0;
            for _ in 0..n_steps {
                r = law.sample(r, rng);
                rates.push(r);
            }
        }
        PathScheme::EulerFullTruncation => {
            let sqrt_h = h.sqrt();
            let sigma = p.sigma2.sqrt();
            let mut x = r0;
            for _ in 0..n_steps {
                let xp = x.max(0.0);
                let z: f64 = StandardNormal.sample(rng);
                x += p.b * (p.a - xp) * h + sigma * (xp).sqrt() * sqrt_h * z;
                rates.push(x.max(0.0));
            }
        }
    }
    let tau = trapezoid(&rates, h);
    Ok(RatePath { dt: h, rates, tau })
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    h * (0.5 * (values[0] + values[values.len() - 1]) + inner)
}

/// Substitution count over [0, t] for one site: a Poisson process driven by
/// a freshly simulated stationary-start rate path, realized by thinning.
pub fn simulate_substitutions<R: Rng + ?Sized>(p: &CirParams, t: f64, rng: &mut R) -> Result<u64> {
    let r0 = p.stationary_sample(rng);
    simulate_substitutions_with(p, r0, t, 1e-3, 1.5, rng)
}

/// Thinning with explicit knobs: grid step for the driving path and the
/// headroom factor of the per-segment dominating rate.
pub fn simulate_substitutions_with<R: Rng + ?Sized>(
    p: &CirParams,
    r0: f64,
    t: f64,
    dt: f64,
    bound_factor: f64,
    rng: &mut R,
) -> Result<u64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {t}")));
    }
    if !(bound_factor >= 1.0) {
        return Err(Error::invalid(format!(
            "bound factor must be at least 1, got {bound_factor}"
        )));
    }
    let path = simulate_path(p, r0, t, dt.min(t), PathScheme::Exact, rng)?;
    let h = path.dt;
    let mut count = 0u64;
    for (k, pair) in path.rates.windows(2).enumerate() {
        let (lo, hi) = (pair[0], pair[1]);
        let _segment_start = k as f64 * h;
        // The interpolated intensity on this segment is linear, so its
        // maximum sits at an endpoint and the factor >= 1 bound dominates.
        let mut bound = bound_factor * lo.max(hi);
        if bound <= 0.0 {
            continue;
        }
        'segment: loop {
            let mut s = 0.0;
            let mut accepted = 0u64;
            loop {
                let gap: f64 = Exp1.sample(rng);
                s += gap / bound;
                if s >= h {
                    count += accepted;
                    break 'segment;
                }
                let rate = lo + (hi - lo) * (s / h);
                if rate > bound {
                    // Dominating rate undershot (cannot happen for a linear
                    // segment, kept as a guard): refresh and redo the
                    // segment from scratch so the law stays exact.
                    bound = bound_factor * rate;
                    continue 'segment;
                }
                if rng.random::<f64>() * bound < rate {
                    accepted += 1;
                }
            }
        }
    }
    Ok(count)
}

/// Replicated substitution counts with stationary initial rates.
#[derive(Debug, Clone)]
pub struct CountSample {
    pub params: CirParams,
    pub horizon: f64,
    pub counts: Vec<u64>,
}

impl CountSample {
    pub fn dispersion(&self) -> Result<DispersionEstimate> {
        empirical_dispersion(&self.counts)
    }
}

/// Runs `replicates` independent substitution-count simulations over
/// horizon t, each from its own seeded stream.
pub fn count_experiment(
    p: &CirParams,
    t: f64,
    replicates: usize,
    seed: u64,
) -> Result<CountSample> {
    if replicates < 100 {
        return Err(Error::invalid(format!(
            "replicates must be at least 100, got {replicates}"
        )));
    }
    let counts = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            simulate_substitutions(p, t, &mut rng)
        })
        .collect::<Result<Vec<u64>>>()?;
    Ok(CountSample {
        params: p.clone(),
        horizon: t,
        counts,
    })
}

/// Empirical index of dispersion of simulated substitution counts.
pub fn dispersion_experiment(
    p: &CirParams,
    t: f64,
    replicates: usize,
    seed: u64,
) -> Result<DispersionEstimate> {
    count_experiment(p, t, replicates, seed)?.dispersion()
}

/// Forward-simulates an alignment down the tree: per site, one continuous
/// rate process over the whole tree (stationary at the root, branching at
/// internal nodes) and character states drawn from e^{Q tau} per branch.
pub fn simulate_sequences(
    tree: &Tree,
    sys: &Eigensystem,
    p: &CirParams,
    n_sites: usize,
    seed: u64,
) -> Result<Alignment> {
    Ok(simulate_sequences_with_tau(tree, sys, p, n_sites, 1e-3, seed)?.0)
}

/// As `simulate_sequences`, with the grid step exposed and the realized
/// integrated rate returned per site and node (0 at the root and across
/// zero-length branches).
pub fn simulate_sequences_with_tau(
    tree: &Tree,
    sys: &Eigensystem,
    p: &CirParams,
    n_sites: usize,
    dt: f64,
    seed: u64,
) -> Result<(Alignment, Vec<Vec<f64>>)> {
    if n_sites == 0 {
        return Err(Error::invalid("n_sites must be at least 1"));
    }
    let leaves = tree.leaves();
    for &leaf in &leaves {
        if tree.node(leaf).label.is_none() {
            return Err(Error::input("every leaf must be labeled"));
        }
    }
    let n_states = sys.n();
    let order = {
        let mut order = tree.postorder();
        order.reverse();
        order
    };

    let per_site: Vec<(Vec<usize>, Vec<f64>)> = (0..n_sites)
        .into_par_iter()
        .map(|site| -> Result<(Vec<usize>, Vec<f64>)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(site as u64);
            let mut rates = vec![0.0f64; tree.len()];
            let mut states = vec![0usize; tree.len()];
            let mut taus = vec![0.0f64; tree.len()];
            for &v in &order {
                match tree.node(v).parent {
                    None => {
                        rates[v] = p.stationary_sample(&mut rng);
                        states[v] = sample_categorical(sys.pi(), &mut rng);
                    }
                    Some(parent) => {
                        let t = tree.node(v).branch_length;
                        if t > 0.0 {
                            let path = simulate_path(
                                p,
                                rates[parent],
                                t,
                                dt.min(t),
                                PathScheme::Exact,
                                &mut rng,
                            )?;
                            rates[v] = *path.rates.last().expect("path is non-empty");
                            taus[v] = path.tau;
                            let matrix = sys.transition_constant_rate(1.0, path.tau)?;
                            let row: Vec<f64> =
                                (0..n_states).map(|j| matrix[(states[parent], j)]).collect();
                            states[v] = sample_categorical(&row, &mut rng);
                        } else {
                            rates[v] = rates[parent];
                            states[v] = states[parent];
                        }
                    }
                }
            }
            let leaf_states = leaves.iter().map(|&l| states[l]).collect();
            Ok((leaf_states, taus))
        })
        .collect::<Result<Vec<_>>>()?;

    let taxa: Vec<String> = leaves
        .iter()
        .map(|&l| tree.node(l).label.clone().expect("checked above"))
        .collect();
    let mut seqs = vec![Vec::with_capacity(n_sites); leaves.len()];
    let mut taus = Vec::with_capacity(n_sites);
    for (leaf_states, site_taus) in per_site {
        for (k, &s) in leaf_states.iter().enumerate() {
            seqs[k].push(Some(s));
        }
        taus.push(site_taus);
    }
    Ok((Alignment::new(taxa, seqs)?, taus))
}

fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    // Weights sum to 1 up to roundoff; the clamp guards the tail.
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w.max(0.0);
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Monte Carlo estimate (mean, standard error) of E[e^{eta tau}] over
/// full-truncation Euler paths: the simulation side of the closed-form mgf.
pub fn integrated_rate_mgf_mc(
    p: &CirParams,
    r0: f64,
    eta: f64,
    t: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_paths < 2 {
        return Err(Error::invalid("n_paths must be at least 2"));
    }
    // Paths are advanced in fixed blocks of 8 and partial sums are reduced
    // in block order, so the float accumulation never depends on how rayon
    // schedules the blocks. Interleaving a block also breaks the serial
    // sqrt/fma dependency chain of one path, which otherwise bounds
    // throughput.
    const BLOCK: usize = 8;
    let n_blocks = n_paths.div_ceil(BLOCK);
    let partials: Vec<(f64, f64)> = (0..n_blocks)
        .into_par_iter()
        .map(|blk| {
            let lo = blk * BLOCK;
            let hi = (lo + BLOCK).min(n_paths);
            euler_mgf_block(p, r0, eta, t, dt, seed, lo, hi)
        })
        .collect();
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for (s, q) in partials {
        sum += s;
        sum_sq += q;
    }
    let nf = n_paths as f64;
    let mean = sum / nf;
    let var = (sum_sq - nf * mean * mean).max(0.0) / (nf - 1.0);
    Ok((mean, (var / nf).sqrt()))
}

/// Sum and sum of squares of e^{eta tau} over paths lo..hi, each path on
/// its own seed stream, tau accumulated by trapezoid without storing the
/// path.
#[allow(clippy::too_many_arguments)]
fn euler_mgf_block(
    p: &CirParams,
    r0: f64,
    eta: f64,
    t: f64,
    dt: f64,
    seed: u64,
    lo: usize,
    hi: usize,
) -> (f64, f64) {
    let n_steps = (t / dt).round().max(1.0) as usize;
    let h = t / n_steps as f64;
    let bh = p.b * h;
    let a = p.a;
    let sig_sqrt_h = p.sigma2.sqrt() * h.sqrt();
    let k = hi - lo;
    let mut rngs: Vec<ChaCha8Rng> = (lo..hi)
        .map(|path_idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path_idx as u64);
            rng
        })
        .collect();
    let mut x = vec![r0; k];
    let mut prev = vec![r0.max(0.0); k];
    let mut tau = vec![0.0f64; k];
    for _ in 0..n_steps {
        for j in 0..k {
            let xp = x[j].max(0.0);
            let z: f64 = StandardNormal.sample(&mut rngs[j]);
            let xn = x[j] + bh * (a - xp) + sig_sqrt_h * xp.sqrt() * z;
            x[j] = xn;
            let cur = xn.max(0.0);
            tau[j] += 0.5 * (prev[j] + cur) * h;
            prev[j] = cur;
        }
    }
    let (mut s, mut q) = (0.0, 0.0);
    for &tj in tau.iter() {
        let v = (eta * tj).exp();
        s += v;
        q += v * v;
    }
    (s, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mgf;
    use crate::phylo::tree::parse_newick;
    use crate::subst::{ModelFamily, RateMatrix};
    use approx::assert_relative_eq;

    fn unit() -> CirParams {
        CirParams::new(1.0, 1.0, 1.0).unwrap()
    }

    fn jc() -> Eigensystem {
        Eigensystem::new(&RateMatrix::build(&ModelFamily::Jc).unwrap()).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn vanishing_noise_recovers_relaxation_ode() {
        let p = CirParams::new(1.0, 1.0, 1e-12).unwrap();
        // dt small enough that the Euler scheme's O(dt) drift error clears
        // the 1e-4 sup-norm bound: max_s s e^{-s} (r0-a) dt / 2 ~ 7e-5.
        let (r0, t, dt) = (2.0, 3.0, 4e-4);
        for scheme in [PathScheme::Exact, PathScheme::EulerFullTruncation] {
            let path = simulate_path(&p, r0, t, dt, scheme, &mut rng(1)).unwrap();
            for (k, &r) in path.rates.iter().enumerate() {
                let s = k as f64 * path.dt;
                let want = 1.0 + (r0 - 1.0) * (-s).exp();
                assert!(
                    (r - want).abs() < 1e-4,
                    "{scheme:?} at s={s}: {r} vs {want}"
                );
            }
            let tau_want = t + (r0 - 1.0) * (1.0 - (-t as f64).exp());
            // The integral accumulates the pointwise bound over the horizon.
            assert!((path.tau - tau_want).abs() < 1e-4 * t);
        }
    }

    #[test]
    fn path_invariants() {
        let p = CirParams::new(1.0, 0.5, 2.0).unwrap();
        let path = simulate_path(&p, 0.7, 2.0, 0.01, PathScheme::Exact, &mut rng(5)).unwrap();
        assert_eq!(path.rates.len(), 201);
        assert!(path.rates.iter().all(|&r| r >= 0.0));
        assert_relative_eq!(
            path.tau,
            trapezoid(&path.rates, path.dt),
            max_relative = 1e-12
        );

        let euler =
            simulate_path(&p, 0.1, 2.0, 0.01, PathScheme::EulerFullTruncation, &mut rng(6))
                .unwrap();
        assert!(euler.rates.iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn path_rejects_bad_arguments() {
        let p = unit();
        assert!(simulate_path(&p, -1.0, 1.0, 0.1, PathScheme::Exact, &mut rng(0)).is_err());
        assert!(simulate_path(&p, 1.0, 1.0, 0.0, PathScheme::Exact, &mut rng(0)).is_err());
        assert!(simulate_path(&p, 1.0, 0.05, 0.1, PathScheme::Exact, &mut rng(0)).is_err());
    }

    #[test]
    fn exact_mode_integrated_rate_is_unbiased() {
        // E[tau] = t exactly when r0 = a.
        let p = unit();
        let n = 3000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut r = rng(11);
        for _ in 0..n {
            let tau = simulate_path(&p, 1.0, 1.0, 0.01, PathScheme::Exact, &mut r)
                .unwrap()
                .tau;
            sum += tau;
            sum_sq += tau * tau;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - 1.0).abs() < 3.5 * se,
            "mean tau {mean} vs 1.0 (se {se})"
        );
    }

    #[test]
    fn euler_mgf_approaches_closed_form() {
        let p = unit();
        let want = mgf::mgf_start(&p, 1.0, -1.0, 1.0).unwrap();
        let (mean, se) = integrated_rate_mgf_mc(&p, 1.0, -1.0, 1.0, 1e-3, 20_000, 3).unwrap();
        // 4 SE: the dt = 1e-3 discretization bias is below the Monte Carlo
        // noise at this sample size but not by a wide margin.
        assert!(
            (mean - want).abs() < 4.0 * se,
            "mc {mean} vs exact {want} (se {se})"
        );
    }

    #[test]
    fn counts_are_poisson_in_the_constant_rate_limit() {
        let p = CirParams::new(1.0, 1.0, 1e-8).unwrap();
        let sample = count_experiment(&p, 5.0, 2000, 17).unwrap();
        let d = sample.dispersion().unwrap();
        assert!((d.mean_count - 5.0).abs() < 3.5 * (5.0f64 / 2000.0).sqrt());
        assert!((d.value - 1.0).abs() < 0.12, "dispersion {}", d.value);
    }

    #[test]
    fn count_mean_matches_stationary_rate() {
        let p = unit();
        let sample = count_experiment(&p, 10.0, 2000, 23).unwrap();
        let d = sample.dispersion().unwrap();
        // Var N = I * mean: use the empirical variance for the z-test.
        let se = (d.var_count / 2000.0).sqrt();
        assert!(
            (d.mean_count - 10.0).abs() < 3.5 * se,
            "mean {} (se {se})",
            d.mean_count
        );
    }

    #[test]
    fn dispersion_grows_toward_its_limit() {
        let p = unit();
        let d1 = dispersion_experiment(&p, 1.0, 1500, 31).unwrap();
        let d10 = dispersion_experiment(&p, 10.0, 1500, 32).unwrap();
        assert!(d1.value < d10.value);
        assert!(d10.value < 2.2);
    }

    #[test]
    fn experiments_are_deterministic_and_validated() {
        let p = unit();
        let a = dispersion_experiment(&p, 2.0, 300, 7).unwrap();
        let b = dispersion_experiment(&p, 2.0, 300, 7).unwrap();
        assert_eq!(a.value, b.value);
        assert!(count_experiment(&p, 2.0, 50, 7).is_err());
        assert!(simulate_substitutions_with(&p, 1.0, 1.0, 1e-3, 0.5, &mut rng(0)).is_err());
    }

    #[test]
    fn zero_branches_copy_sequences() {
        let tree = parse_newick("(A:0.0,B:0.0);").unwrap();
        let aln = simulate_sequences(&tree, &jc(), &unit(), 50, 9).unwrap();
        assert_eq!(aln.sequence(0), aln.sequence(1));
    }

    #[test]
    fn long_branches_saturate_to_stationary_identity() {
        let tree = parse_newick("(A:50.0,B:50.0);").unwrap();
        let n = 8000;
        let (aln, _) =
            simulate_sequences_with_tau(&tree, &jc(), &unit(), n, 0.1, 13).unwrap();
        let matches = (0..n)
            .filter(|&s| aln.sequence(0)[s] == aln.sequence(1)[s])
            .count();
        let identity = matches as f64 / n as f64;
        assert!(
            (identity - 0.25).abs() < 0.015,
            "pairwise identity {identity}"
        );
    }

    #[test]
    fn sequence_simulation_is_deterministic() {
        let tree = parse_newick("(A:0.2,B:0.4,C:0.1);").unwrap();
        let a = simulate_sequences(&tree, &jc(), &unit(), 30, 21).unwrap();
        let b = simulate_sequences(&tree, &jc(), &unit(), 30, 21).unwrap();
        for t in 0..3 {
            assert_eq!(a.sequence(t), b.sequence(t));
        }
    }

    #[test]
    fn simulated_pattern_frequencies_match_exact_likelihood() {
        let tree = parse_newick("(A:0.1,B:0.2,C:0.3);").unwrap();
        let sys = jc();
        let p = unit();
        let n = 4000;
        let (aln, _) = simulate_sequences_with_tau(&tree, &sys, &p, n, 1e-2, 29).unwrap();
        let want =
            crate::phylo::likelihood::three_taxa_likelihood(&sys, &p, [0.1, 0.2, 0.3], [0, 0, 0])
                .unwrap();
        let hits = (0..n)
            .filter(|&s| (0..3).all(|t| aln.sequence(t)[s] == Some(0)))
            .count();
        let freq = hits as f64 / n as f64;
        let se = (want * (1.0 - want) / n as f64).sqrt();
        assert!(
            (freq - want).abs() < 4.0 * se,
            "freq {freq} vs exact {want} (se {se})"
        );
    }

    #[test]
    fn realized_tau_tracks_branch_lengths() {
        let tree = parse_newick("(A:0.5,B:2.0);").unwrap();
        let n = 1500;
        let (_, taus) = simulate_sequences_with_tau(&tree, &jc(), &unit(), n, 1e-2, 37).unwrap();
        // Leaves are nodes 1 and 2 under the root; E[tau] = branch length at
        // stationarity.
        let mean =
            |node: usize| taus.iter().map(|site| site[node]).sum::<f64>() / n as f64;
        let leaves = tree.leaves();
        let m_a = mean(leaves[0]);
        let m_b = mean(leaves[1]);
        assert!((m_a - 0.5).abs() < 0.08, "mean tau A {m_a}");
        assert!((m_b - 2.0).abs() < 0.25, "mean tau B {m_b}");
    }
}
