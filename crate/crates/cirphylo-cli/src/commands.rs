//! Subcommand implementations. Each builds its full output as a string so
//! writing to stdout or --out is uniform and byte-identical runs are easy to
//! verify.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use cirphylo::phylo::{
    mc_tree_likelihood, parse_newick, read_alignment, Alignment, AlignmentFormat, Alphabet,
    three_taxa_likelihood, Tree,
};
use cirphylo::sim::{dispersion_experiment, simulate_sequences};
use cirphylo::{
    mgf_bridge, mgf_start, CirParams, Eigensystem, Error, ModelFamily, RateMatrix, Result,
};
use serde::Serialize;

use crate::{CirArgs, Command, ModelArgs, ModelName, OutputFormat};

pub fn run(command: Command, format: OutputFormat, out: Option<&Path>) -> Result<()> {
    let text = match command {
        Command::Estimate { gamma, dispersion } => cmd_estimate(gamma, dispersion, format)?,
        Command::Mgf { cir, eta, t, r0, rt } => cmd_mgf(&cir.resolve()?, eta, t, r0, rt, format)?,
        Command::Dispersion {
            cir,
            t,
            replicates,
            seed,
        } => cmd_dispersion(&cir.resolve()?, t, replicates, seed, format)?,
        Command::Lik {
            tree,
            aln,
            model,
            cir,
            samples,
            seed,
            force_mc,
        } => cmd_lik(
            &tree,
            &aln,
            &model,
            &cir.resolve()?,
            samples,
            seed,
            force_mc,
            format,
        )?,
        Command::Simulate {
            tree,
            model,
            cir,
            sites,
            seed,
        } => cmd_simulate(&tree, &model, &cir.resolve()?, sites, seed)?,
    };
    match out {
        Some(path) => fs::write(path, &text)
            .map_err(|e| Error::input(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

impl CirArgs {
    pub fn resolve(&self) -> Result<CirParams> {
        match (&self.cir, self.gamma, self.dispersion) {
            (Some(spec), None, None) => {
                let v = parse_floats(spec, 3, "--cir")?;
                CirParams::new(v[0], v[1], v[2])
            }
            (None, Some(g), Some(i)) => CirParams::from_stats(g, i),
            _ => Err(Error::invalid(
                "provide either --cir A,B,SIGMA2 or the pair --gamma/--dispersion",
            )),
        }
    }
}

impl ModelArgs {
    fn family(&self) -> Result<ModelFamily> {
        let kappa = |flag: Option<f64>| {
            flag.ok_or_else(|| Error::invalid("this model requires --kappa"))
        };
        let freqs = |flag: &Option<String>| -> Result<[f64; 4]> {
            let s = flag
                .as_ref()
                .ok_or_else(|| Error::invalid("this model requires --freqs A,C,G,T"))?;
            let v = parse_floats(s, 4, "--freqs")?;
            Ok([v[0], v[1], v[2], v[3]])
        };
        let reject = |flag: bool, name: &str| {
            if flag {
                Err(Error::invalid(format!(
                    "{name} is not a parameter of this model"
                )))
            } else {
                Ok(())
            }
        };
        match self.model {
            ModelName::Jc => {
                reject(self.kappa.is_some(), "--kappa")?;
                reject(self.freqs.is_some(), "--freqs")?;
                reject(self.exchange.is_some(), "--exchange")?;
                Ok(ModelFamily::Jc)
            }
            ModelName::K2p => {
                reject(self.freqs.is_some(), "--freqs")?;
                reject(self.exchange.is_some(), "--exchange")?;
                Ok(ModelFamily::K2p {
                    kappa: kappa(self.kappa)?,
                })
            }
            ModelName::Hky => {
                reject(self.exchange.is_some(), "--exchange")?;
                Ok(ModelFamily::Hky {
                    kappa: kappa(self.kappa)?,
                    pi: freqs(&self.freqs)?,
                })
            }
            ModelName::Gtr => {
                reject(self.kappa.is_some(), "--kappa")?;
                let s = self
                    .exchange
                    .as_ref()
                    .ok_or_else(|| Error::invalid("gtr requires --exchange S1,..,S6"))?;
                let v = parse_floats(s, 6, "--exchange")?;
                Ok(ModelFamily::Gtr {
                    exchange: [v[0], v[1], v[2], v[3], v[4], v[5]],
                    pi: freqs(&self.freqs)?,
                })
            }
        }
    }

    fn name(&self) -> &'static str {
        match self.model {
            ModelName::Jc => "jc",
            ModelName::K2p => "k2p",
            ModelName::Hky => "hky",
            ModelName::Gtr => "gtr",
        }
    }
}

fn parse_floats(s: &str, n: usize, flag: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != n {
        return Err(Error::invalid(format!(
            "{flag} expects {n} comma-separated numbers, got {}",
            parts.len()
        )));
    }
    parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("{flag}: {p:?} is not a number")))
        })
        .collect()
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))
}

fn read_tree(path: &Path) -> Result<Tree> {
    parse_newick(&read_file(path)?)
}

/// FASTA starts with a '>' record marker; everything else is treated as
/// sequential PHYLIP.
fn read_aln(path: &Path, alphabet: &Alphabet) -> Result<Alignment> {
    let text = read_file(path)?;
    let format = if text.trim_start().starts_with('>') {
        AlignmentFormat::Fasta
    } else {
        AlignmentFormat::Phylip
    };
    read_alignment(&text, format, alphabet)
}

/// Shortest round-trip decimal form; the one float format used everywhere.
fn fmt(v: f64) -> String {
    format!("{v}")
}

fn render<T: Serialize>(json: &T, csv: String, format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => csv,
        // Struct field order is fixed, so this is deterministic.
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(json).expect("output structs serialize");
            s.push('\n');
            s
        }
    }
}

#[derive(Serialize)]
struct EstimateOut {
    command: &'static str,
    gamma: f64,
    dispersion: f64,
    a: f64,
    b: f64,
    sigma2: f64,
    stationary_shape: f64,
    stationary_scale: f64,
}

fn cmd_estimate(gamma: f64, dispersion: f64, format: OutputFormat) -> Result<String> {
    let p = CirParams::from_stats(gamma, dispersion)?;
    let out = EstimateOut {
        command: "estimate",
        gamma,
        dispersion,
        a: p.a,
        b: p.b,
        sigma2: p.sigma2,
        stationary_shape: p.stationary_shape(),
        stationary_scale: p.stationary_scale(),
    };
    let csv = format!(
        "gamma,dispersion,a,b,sigma2,stationary_shape,stationary_scale\n{},{},{},{},{},{},{}\n",
        fmt(out.gamma),
        fmt(out.dispersion),
        fmt(out.a),
        fmt(out.b),
        fmt(out.sigma2),
        fmt(out.stationary_shape),
        fmt(out.stationary_scale),
    );
    Ok(render(&out, csv, format))
}

#[derive(Serialize)]
struct MgfOut {
    command: &'static str,
    kind: &'static str,
    a: f64,
    b: f64,
    sigma2: f64,
    eta: f64,
    t: f64,
    r0: f64,
    rt: Option<f64>,
    value: f64,
}

fn cmd_mgf(
    p: &CirParams,
    eta: f64,
    t: f64,
    r0: f64,
    rt: Option<f64>,
    format: OutputFormat,
) -> Result<String> {
    let (kind, value) = match rt {
        None => ("start", mgf_start(p, r0, eta, t)?),
        Some(rt) => ("bridge", mgf_bridge(p, r0, rt, eta, t)?),
    };
    let out = MgfOut {
        command: "mgf",
        kind,
        a: p.a,
        b: p.b,
        sigma2: p.sigma2,
        eta,
        t,
        r0,
        rt,
        value,
    };
    let csv = format!(
        "kind,a,b,sigma2,eta,t,r0,rt,value\n{},{},{},{},{},{},{},{},{}\n",
        kind,
        fmt(p.a),
        fmt(p.b),
        fmt(p.sigma2),
        fmt(eta),
        fmt(t),
        fmt(r0),
        rt.map(fmt).unwrap_or_default(),
        fmt(value),
    );
    Ok(render(&out, csv, format))
}

#[derive(Serialize)]
struct DispersionOut {
    command: &'static str,
    t: f64,
    replicates: usize,
    seed: u64,
    index_of_dispersion: f64,
    theoretical_index: f64,
    mean_count: f64,
    var_count: f64,
}

fn cmd_dispersion(
    p: &CirParams,
    t: f64,
    replicates: usize,
    seed: u64,
    format: OutputFormat,
) -> Result<String> {
    let est = dispersion_experiment(p, t, replicates, seed)?;
    let out = DispersionOut {
        command: "dispersion",
        t,
        replicates,
        seed,
        index_of_dispersion: est.value,
        theoretical_index: p.index_of_dispersion(t)?,
        mean_count: est.mean_count,
        var_count: est.var_count,
    };
    let csv = format!(
        "t,replicates,seed,index_of_dispersion,theoretical_index,mean_count,var_count\n\
         {},{},{},{},{},{},{}\n",
        fmt(out.t),
        out.replicates,
        out.seed,
        fmt(out.index_of_dispersion),
        fmt(out.theoretical_index),
        fmt(out.mean_count),
        fmt(out.var_count),
    );
    Ok(render(&out, csv, format))
}

#[derive(Serialize)]
struct SiteOut {
    site: usize,
    log_likelihood: f64,
    std_err: f64,
    rejected: u64,
}

#[derive(Serialize)]
struct LikOut {
    command: &'static str,
    method: &'static str,
    model: &'static str,
    seed: u64,
    /// Monte Carlo sample count; null when the exact formula was used.
    samples: Option<usize>,
    n_sites: usize,
    sites: Vec<SiteOut>,
    total_log_likelihood: f64,
    total_std_err: f64,
    total_rejected: u64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_lik(
    tree_path: &Path,
    aln_path: &Path,
    model: &ModelArgs,
    p: &CirParams,
    samples: usize,
    seed: u64,
    force_mc: bool,
    format: OutputFormat,
) -> Result<String> {
    let tree = read_tree(tree_path)?;
    let alphabet = Alphabet::dna();
    let aln = read_aln(aln_path, &alphabet)?;
    let sys = Eigensystem::new(&RateMatrix::build(&model.family()?)?)?;

    // The closed form needs strictly positive branch lengths; a star with a
    // zero edge falls through to Monte Carlo like any other shape.
    let exact = !force_mc
        && tree.is_three_leaf_star()
        && tree
            .leaves()
            .iter()
            .all(|&l| tree.node(l).branch_length > 0.0);

    let sites = if exact {
        exact_star_sites(&sys, p, &tree, &aln)?
    } else {
        mc_tree_likelihood(&sys, p, &tree, &aln, samples, seed)?
            .iter()
            .enumerate()
            .map(|(s, est)| SiteOut {
                site: s + 1,
                // Delta method: se(ln X) ~ se(X) / X.
                log_likelihood: est.mean.ln(),
                std_err: est.std_err / est.mean,
                rejected: est.rejected,
            })
            .collect()
    };

    let method = if exact { "exact" } else { "mc" };
    let out = LikOut {
        command: "lik",
        method,
        model: model.name(),
        seed,
        samples: (!exact).then_some(samples),
        n_sites: sites.len(),
        total_log_likelihood: sites.iter().map(|s| s.log_likelihood).sum(),
        total_std_err: sites
            .iter()
            .map(|s| s.std_err * s.std_err)
            .sum::<f64>()
            .sqrt(),
        total_rejected: sites.iter().map(|s| s.rejected).sum(),
        sites,
    };

    let mut csv = String::from("site,log_likelihood,std_err,rejected,method\n");
    for s in &out.sites {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            s.site,
            fmt(s.log_likelihood),
            fmt(s.std_err),
            s.rejected,
            method
        ));
    }
    csv.push_str(&format!(
        "total,{},{},{},{}\n",
        fmt(out.total_log_likelihood),
        fmt(out.total_std_err),
        out.total_rejected,
        method
    ));
    Ok(render(&out, csv, format))
}

/// Exact per-site likelihoods on a three-leaf star. Gapped leaves are
/// marginalized by summing the closed form over their states; repeated
/// columns share one evaluation.
fn exact_star_sites(
    sys: &Eigensystem,
    p: &CirParams,
    tree: &Tree,
    aln: &Alignment,
) -> Result<Vec<SiteOut>> {
    let leaves = tree.leaves();
    let mut times = [0.0; 3];
    let mut rows = [0usize; 3];
    for (k, &l) in leaves.iter().enumerate() {
        let node = tree.node(l);
        times[k] = node.branch_length;
        let label = node.label.as_deref().unwrap_or_default();
        rows[k] = aln.taxon_index(label).ok_or_else(|| {
            Error::input(format!("leaf {label:?} has no sequence in the alignment"))
        })?;
    }
    let n = sys.n();
    let mut memo: HashMap<[Option<usize>; 3], f64> = HashMap::new();
    let mut sites = Vec::with_capacity(aln.n_sites());
    for site in 0..aln.n_sites() {
        let col = [
            aln.sequence(rows[0])[site],
            aln.sequence(rows[1])[site],
            aln.sequence(rows[2])[site],
        ];
        let lik = match memo.get(&col) {
            Some(&v) => v,
            None => {
                let mut total = 0.0;
                for i in col[0].map_or(0..n, |s| s..s + 1) {
                    for j in col[1].map_or(0..n, |s| s..s + 1) {
                        for k in col[2].map_or(0..n, |s| s..s + 1) {
                            total += three_taxa_likelihood(sys, p, times, [i, j, k])?;
                        }
                    }
                }
                memo.insert(col, total);
                total
            }
        };
        sites.push(SiteOut {
            site: site + 1,
            log_likelihood: lik.ln(),
            std_err: 0.0,
            rejected: 0,
        });
    }
    Ok(sites)
}

fn cmd_simulate(
    tree_path: &Path,
    model: &ModelArgs,
    p: &CirParams,
    sites: usize,
    seed: u64,
) -> Result<String> {
    let tree = read_tree(tree_path)?;
    let sys = Eigensystem::new(&RateMatrix::build(&model.family()?)?)?;
    let aln = simulate_sequences(&tree, &sys, p, sites, seed)?;
    Ok(aln.write_fasta(&Alphabet::dna()))
}
