use serde::Serialize;

use super::output::{num, to_json, Artifacts, Csv};
use super::{
    AuditArgs, CauchyArgs, CliError, Command, ConvergeArgs, IndependenceArgs, LengthmapArgs,
    ReferenceArg,
};
use crate::activations::{audit_permissibility, ProbeGrid};
use crate::lengthmap::{compute_length_map, LayerStatus};
use crate::quadrature::QuadratureSpec;
use crate::simulator::{for_each_trial, simulate_ensemble, CaptureSpec, InputSpec, NetworkConfig};
use crate::stats::convergence::width_seed;
use crate::stats::{
    convergence_report, cross_moment_gap, fit_and_test_distribution, theoretical_gap,
    ConvergenceSetup, DistributionFit, Histogram, Reference,
};

/// Runs one command and returns what it prints on stdout.
pub(super) fn dispatch(cmd: &Command, workers: Option<usize>) -> Result<String, CliError> {
    match cmd {
        Command::Lengthmap(a) => lengthmap(a),
        Command::Converge(a) => converge(a, workers),
        Command::Cauchy(a) => cauchy(a, workers),
        Command::Independence(a) => independence(a, workers),
        Command::Audit(a) => audit(a),
    }
}

fn config_value<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("argument structs serialize")
}

fn lengthmap(a: &LengthmapArgs) -> Result<String, CliError> {
    let map = compute_length_map(&a.act, a.sw, a.sb, a.depth, &QuadratureSpec::default())?;
    let mut csv = Csv::new(&["layer", "qtilde", "tr", "status"]);
    for l in 0..=a.depth {
        let status = match map.status[l] {
            LayerStatus::Finite => "finite",
            LayerStatus::Diverged => "diverged",
        };
        csv.row(&[l.to_string(), num(map.qtilde[l]), num(map.trtilde[l]), status.into()]);
    }
    let json = to_json(&map);
    let mut art = Artifacts::new(a.output.out.as_deref())?;
    art.write("lengthmap.csv", csv.as_str())?;
    art.write("lengthmap.json", &json)?;
    art.finish("lengthmap", config_value(a), None, None)?;
    Ok(if a.output.json { json } else { csv.as_str().to_string() })
}

#[derive(Serialize)]
struct ConvergeRow {
    width: usize,
    /// `1..=D`, or `all` for the whole process.
    layer: String,
    trials: u64,
    successes: u64,
    success_fraction: f64,
    ci_lo: f64,
    ci_hi: f64,
}

fn converge(a: &ConvergeArgs, workers: Option<usize>) -> Result<String, CliError> {
    let setup = ConvergenceSetup {
        activation: a.act.clone(),
        sigma_w: a.sw,
        sigma_b: a.sb,
        depth: a.depth,
        widths: a.widths.clone(),
        trials: a.trials,
        epsilon: a.eps,
        seed: a.seed,
        input: InputSpec::AllOnes,
    };
    let report = convergence_report(&setup, workers)?;

    let mut rows = Vec::new();
    for w in &report.widths {
        for l in 1..=a.depth {
            let s = w.layer_successes[l];
            let (lo, hi) = crate::stats::wilson_interval(s, w.trials);
            rows.push(ConvergeRow {
                width: w.width,
                layer: l.to_string(),
                trials: w.trials,
                successes: s,
                success_fraction: s as f64 / w.trials as f64,
                ci_lo: lo,
                ci_hi: hi,
            });
        }
        rows.push(ConvergeRow {
            width: w.width,
            layer: "all".into(),
            trials: w.trials,
            successes: w.successes,
            success_fraction: w.success_fraction,
            ci_lo: w.ci_lo,
            ci_hi: w.ci_hi,
        });
    }
    let mut csv = Csv::new(&[
        "width", "layer", "trials", "successes", "success_fraction", "ci_lo", "ci_hi",
    ]);
    for r in &rows {
        csv.row(&[
            r.width.to_string(),
            r.layer.clone(),
            r.trials.to_string(),
            r.successes.to_string(),
            num(r.success_fraction),
            num(r.ci_lo),
            num(r.ci_hi),
        ]);
    }
    let json = to_json(&serde_json::json!({
        "rows": rows,
        "nondecreasing_within_ci": report.nondecreasing_within_ci(),
        "report": report,
    }));
    let mut art = Artifacts::new(a.output.out.as_deref())?;
    art.write("converge.csv", csv.as_str())?;
    art.write("converge.json", &json)?;
    art.finish("converge", config_value(a), Some(a.seed), workers)?;
    Ok(if a.output.json { json } else { csv.as_str().to_string() })
}

#[derive(Serialize)]
struct CauchyWidth {
    width: usize,
    seed: u64,
    trials: u64,
    overflow_trials: u64,
    histogram: Histogram,
    fit: DistributionFit,
}

fn hist_csv(h: &Histogram, cauchy: (f64, f64), sigma: f64) -> Csv {
    let mut csv = Csv::new(&[
        "bin_lo", "bin_hi", "count", "density", "cauchy_density", "gaussian_density",
    ]);
    let edges = h.edges();
    let total = h.total() as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    for (k, &c) in h.counts.iter().enumerate() {
        let (lo, hi) = (edges[k], edges[k + 1]);
        let mid = 0.5 * (lo + hi);
        let zc = (mid - cauchy.0) / cauchy.1;
        let zg = mid / sigma;
        csv.row(&[
            num(lo),
            num(hi),
            c.to_string(),
            num(c as f64 / (total * (hi - lo))),
            num(1.0 / (std::f64::consts::PI * cauchy.1 * (1.0 + zc * zc))),
            num(norm * (-0.5 * zg * zg).exp() / sigma),
        ]);
    }
    csv
}

fn cauchy(a: &CauchyArgs, workers: Option<usize>) -> Result<String, CliError> {
    let mut art = Artifacts::new(a.output.out.as_deref())?;
    let mut summary = Csv::new(&[
        "width",
        "trials",
        "overflow_trials",
        "samples",
        "cauchy_location",
        "cauchy_scale",
        "gaussian_sigma",
        "ks_vs_cauchy",
        "ks_vs_gaussian",
        "hist_underflow",
        "hist_overflow",
    ]);
    let mut per_width = Vec::new();
    for &n in &a.widths {
        let sqrt_n = (n as f64).sqrt();
        let (lo, hi) = a.range.map_or((-10.0 * sqrt_n, 10.0 * sqrt_n), |r| (r.lo, r.hi));
        let seed = width_seed(a.seed, n);
        let cfg = NetworkConfig::new(a.act.clone(), n, a.capture.layer, a.sw, a.sb).with_seed(seed);
        let cap = CaptureSpec {
            layer: a.capture.layer,
            units: a.capture.units.clone(),
            max_samples: a.max_samples,
            histogram: Some((a.bins, lo, hi)),
        };
        let stats = simulate_ensemble(&cfg, a.trials, Some(&cap), workers)?;
        let reference = match a.reference {
            ReferenceArg::SqrtN => Reference::Cauchy { location: 0.0, scale: sqrt_n },
            ReferenceArg::Fit => Reference::AutoFit,
        };
        let fit = fit_and_test_distribution(&stats.samples, reference)?;
        let hist = stats.histogram.expect("histogram requested");
        let cauchy_ref = match reference {
            Reference::Cauchy { location, scale } => (location, scale),
            _ => (fit.cauchy_location, fit.cauchy_scale),
        };
        art.write(
            &format!("cauchy_hist_N{n}.csv"),
            hist_csv(&hist, cauchy_ref, fit.gaussian_sigma).as_str(),
        )?;

        if a.per_init {
            let cap = CaptureSpec { histogram: None, ..cap.clone() };
            let mut csv = Csv::new(&["trial", "bin_lo", "bin_hi", "count"]);
            let mut failure = None;
            for_each_trial(&cfg, a.trials, Some(&cap), workers, |t, outcome| match outcome {
                Ok(obs) => {
                    let mut h = Histogram::new(a.bins, lo, hi).expect("validated above");
                    obs.captured.iter().for_each(|&x| h.add(x));
                    let e = h.edges();
                    for (k, &c) in h.counts.iter().enumerate() {
                        csv.row(&[t.to_string(), num(e[k]), num(e[k + 1]), c.to_string()]);
                    }
                }
                Err(err) => failure = failure.take().or(Some((t, err))),
            })?;
            if let Some((t, err)) = failure {
                eprintln!("lenmap: trial {t} skipped in per-initialization histograms: {err}");
            }
            art.write(&format!("cauchy_init_N{n}.csv"), csv.as_str())?;
        }

        summary.row(&[
            n.to_string(),
            a.trials.to_string(),
            stats.overflow_count.to_string(),
            fit.sample_count.to_string(),
            num(fit.cauchy_location),
            num(fit.cauchy_scale),
            num(fit.gaussian_sigma),
            num(fit.ks_vs_cauchy),
            num(fit.ks_vs_gaussian),
            hist.underflow.to_string(),
            hist.overflow.to_string(),
        ]);
        per_width.push(CauchyWidth {
            width: n,
            seed,
            trials: a.trials,
            overflow_trials: stats.overflow_count,
            histogram: hist,
            fit,
        });
    }
    let json = to_json(&per_width);
    art.write("cauchy_summary.csv", summary.as_str())?;
    art.write("cauchy_fit.json", &json)?;
    art.finish("cauchy", config_value(a), Some(a.seed), workers)?;
    Ok(if a.output.json { json } else { summary.as_str().to_string() })
}

#[derive(Serialize)]
struct IndependenceReport {
    activation: String,
    width: usize,
    sigma_w: f64,
    sigma_b: f64,
    layer: usize,
    units: [usize; 2],
    seed: u64,
    trials: u64,
    overflow_trials: u64,
    #[serde(flatten)]
    result: crate::stats::CrossMomentResult,
}

fn independence(a: &IndependenceArgs, workers: Option<usize>) -> Result<String, CliError> {
    let units = match &a.capture.units {
        Some(u) if u.len() == 2 && u[0] != u[1] => [u[0], u[1]],
        _ => {
            return Err(CliError::Usage(
                "--capture must name two distinct units, e.g. 2:0,1".into(),
            ))
        }
    };
    let trials_cap = usize::try_from(a.trials)
        .map_err(|_| CliError::Usage("too many trials".into()))?;
    let cfg = NetworkConfig::new(a.act.clone(), a.width, a.capture.layer, a.sw, a.sb)
        .with_seed(a.seed);
    let cap = CaptureSpec::units(a.capture.layer, units.to_vec(), trials_cap);
    let stats = simulate_ensemble(&cfg, a.trials, Some(&cap), workers)?;
    let mut result = cross_moment_gap(&stats.pairs)?;
    // the closed forms describe second-layer units
    if a.capture.layer == 2 {
        if let Ok(t) = theoretical_gap(&a.act, a.sw, a.sb, a.width) {
            result = result.with_theory(t);
        }
    }
    let report = IndependenceReport {
        activation: a.act.to_string(),
        width: a.width,
        sigma_w: a.sw,
        sigma_b: a.sb,
        layer: a.capture.layer,
        units,
        seed: a.seed,
        trials: a.trials,
        overflow_trials: stats.overflow_count,
        result,
    };
    let opt = |x: Option<f64>| x.map_or_else(String::new, num);
    let mut csv = Csv::new(&["key", "value"]);
    for (k, v) in [
        ("activation", report.activation.clone()),
        ("width", report.width.to_string()),
        ("sigma_w", num(report.sigma_w)),
        ("sigma_b", num(report.sigma_b)),
        ("layer", report.layer.to_string()),
        ("trials", report.trials.to_string()),
        ("overflow_trials", report.overflow_trials.to_string()),
        ("samples", report.result.samples.to_string()),
        ("gap_estimate", num(report.result.gap_estimate)),
        ("std_error", num(report.result.std_error)),
        ("z_score", num(report.result.z_score)),
        ("theoretical_gap", opt(report.result.theoretical_gap)),
        ("z_vs_theory", opt(report.result.z_vs_theory)),
    ] {
        csv.row(&[k.into(), v]);
    }
    let json = to_json(&report);
    let mut art = Artifacts::new(a.output.out.as_deref())?;
    art.write("independence.csv", csv.as_str())?;
    art.write("independence.json", &json)?;
    art.finish("independence", config_value(a), Some(a.seed), workers)?;
    Ok(if a.output.json { json } else { csv.as_str().to_string() })
}

fn audit(a: &AuditArgs) -> Result<String, CliError> {
    let report = audit_permissibility(&a.act, &ProbeGrid::default())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let verdict = serde_json::to_value(report.verdict).expect("verdict serializes");
    let mut csv = Csv::new(&["key", "value"]);
    for (k, v) in [
        ("activation", report.activation.clone()),
        ("interval_bounded", report.interval_bounded.to_string()),
        ("growth_exponent_estimate", num(report.growth_exponent_estimate)),
        ("verdict", verdict.as_str().unwrap_or_default().to_string()),
        ("probe_lo", num(report.probe_range[0])),
        ("probe_hi", num(report.probe_range[1])),
    ] {
        csv.row(&[k.into(), v]);
    }
    let json = to_json(&report);
    let mut art = Artifacts::new(a.output.out.as_deref())?;
    art.write("audit.csv", csv.as_str())?;
    art.write("audit.json", &json)?;
    art.finish("audit", config_value(a), None, None)?;
    Ok(if a.output.json { json } else { csv.as_str().to_string() })
}
