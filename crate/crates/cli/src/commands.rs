use std::io::Write;
use std::path::Path;

use multipoet::clustering::{misclassification_rate, rsc_cluster};
use multipoet::estimators::{
    principal_truncation_with, GroupStructure, Method, ReturnsPanel, SampleSpectrum, ThresholdRule,
};
use multipoet::pipeline::{default_k_max, fit_estimator, EstimatorConfig, FittedEstimate};
use multipoet::portfolio::{backtest, Schedule};
use multipoet::selection::{default_phi, mer_select_from_eigenvalues, ModelSelection};
use multipoet::simulation::{
    generate_model, simulate_panel, run_replications, DgpSpec, FactorCounts, GridPoint, ReplicationConfig, SimMethod,
    Target,
};

use crate::args::{
    BacktestArgs, ClusterArgs, EstimateArgs, FactorArgs, GenerateArgs, RuleArg, SelectArgs, SimulateArgs, TargetArg,
    VaryArg,
};
use crate::error::{CliError, CliResult};
use crate::io::{self, fmt_f64};

/// Resolved arguments, written to every output directory.
pub type Echo = Vec<(String, String)>;

fn prepare_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_manifest(dir: &Path, command: &str, echo: &Echo, extra: Echo) -> CliResult<()> {
    let mut entries = vec![
        ("command".to_string(), command.to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ];
    entries.extend(echo.iter().cloned());
    entries.extend(extra);
    io::write_record(&dir.join("manifest.txt"), &entries)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn select_global(panel: &ReturnsPanel, spectrum: &SampleSpectrum, k_max: Option<usize>, groups: usize, r_max: usize, phi_scale: f64) -> CliResult<ModelSelection> {
    let (t, p) = (panel.n_obs(), panel.n_assets());
    let k_max = k_max.unwrap_or_else(|| default_k_max(p, t, groups, r_max));
    Ok(mer_select_from_eigenvalues(
        spectrum.eigen().values.as_slice(),
        k_max,
        default_phi(p, phi_scale),
    )?)
}

/// Membership from a truth file, or `None` when no file was given.
fn read_truth(path: Option<&Path>, panel: &ReturnsPanel) -> CliResult<Option<GroupStructure>> {
    path.map(|p| io::read_membership(p, panel.asset_ids()).map(|(g, _)| g))
        .transpose()
}

struct Detected {
    groups: GroupStructure,
    k_removed: usize,
    misclassification: Option<f64>,
}

fn detect_groups(
    panel: &ReturnsPanel,
    n_groups: usize,
    k: Option<usize>,
    k_max: Option<usize>,
    phi_scale: f64,
    seed: u64,
    truth: Option<&Path>,
) -> CliResult<Detected> {
    let spectrum = SampleSpectrum::new(panel);
    let k = match k {
        Some(k) => k,
        None => select_global(panel, &spectrum, k_max, n_groups, 10, phi_scale)?.k_hat,
    };
    let remainder = principal_truncation_with(spectrum.covariance(), spectrum.eigen(), k)?.remainder;
    let fit = rsc_cluster(&remainder, n_groups, seed)?;
    let groups = GroupStructure::new(fit.labels)?;
    let misclassification = match read_truth(truth, panel)? {
        Some(t) => Some(misclassification_rate(groups.membership(), t.membership())?),
        None => None,
    };
    Ok(Detected {
        groups,
        k_removed: k,
        misclassification,
    })
}

fn estimator_config(
    method: &str,
    f: &FactorArgs,
    groups: Option<GroupStructure>,
    panel: &ReturnsPanel,
) -> CliResult<EstimatorConfig> {
    let method = Method::from_tag(method).ok_or_else(|| {
        CliError::Config(format!(
            "unknown method '{method}' (expected samcov, poet, poet2, double_poet or identity)"
        ))
    })?;
    let mut cfg = EstimatorConfig::new(method);
    cfg.k = f.k;
    cfg.k_max = f.kmax;
    cfg.r_max = f.rmax;
    cfg.phi_scale = f.phi_scale;
    cfg.tau = f.tau;
    cfg.r = match (&f.r, &groups) {
        (Some(r), Some(g)) if r.len() == 1 && method == Method::DoublePoet => Some(vec![r[0]; g.n_groups()]),
        (Some(r), Some(g)) if method == Method::DoublePoet && r.len() != g.n_groups() => {
            return Err(CliError::Config(format!(
                "--r has {} values for {} groups",
                r.len(),
                g.n_groups()
            )))
        }
        (r, _) => r.clone(),
    };
    cfg.rule = match f.rule {
        RuleArg::Soft => ThresholdRule::Soft,
        RuleArg::Hard => ThresholdRule::Hard,
        RuleArg::Sector => {
            let path = f
                .sectors
                .as_deref()
                .ok_or_else(|| CliError::Config("--rule sector needs --sectors FILE".into()))?;
            ThresholdRule::SectorBlock(io::read_sectors(path, panel.asset_ids())?)
        }
    };
    cfg.groups = groups;
    Ok(cfg)
}

fn fit_summary(fit: &FittedEstimate) -> Echo {
    let mut out = vec![
        ("k_used".to_string(), fit.k.to_string()),
        ("r_used".to_string(), join(&fit.r)),
        ("tau_used".to_string(), fmt_f64(fit.tau)),
    ];
    if let Some(s) = &fit.selection {
        out.push(("selection_variant".into(), s.variant.to_string()));
        out.push(("selection_k1".into(), s.k1.to_string()));
        out.push(("selection_k2".into(), s.k2.to_string()));
        out.push(("selection_phi".into(), fmt_f64(s.phi_p)));
    }
    out
}

pub fn estimate(args: &EstimateArgs, echo: &Echo) -> CliResult<()> {
    let panel = io::read_returns(&args.returns)?;
    let mut extra = Echo::new();
    let groups = match (&args.membership, args.cluster) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either --membership or --cluster, not both".into())),
        (Some(path), None) => Some(io::read_membership(path, panel.asset_ids())?.0),
        (None, Some(n)) => {
            let d = detect_groups(
                &panel,
                n,
                args.factors.k,
                args.factors.kmax,
                args.factors.phi_scale,
                args.seed,
                args.truth.as_deref(),
            )?;
            extra.push(("cluster_global_factors_removed".into(), d.k_removed.to_string()));
            if let Some(rate) = d.misclassification {
                extra.push(("cluster_misclassification".into(), fmt_f64(rate)));
                eprintln!("detected groups: misclassification {rate:.4} against the truth file");
            }
            Some(d.groups)
        }
        (None, None) => None,
    };
    let cfg = estimator_config(&args.method, &args.factors, groups, &panel)?;
    let fit = fit_estimator(&panel, &cfg)?;

    prepare_out(&args.out)?;
    let ids = panel.asset_ids();
    io::write_matrix(&args.out.join("covariance.csv"), ids, fit.estimate.assembled().as_matrix())?;
    if args.parts {
        io::write_matrix(&args.out.join("global.csv"), ids, fit.estimate.global_part().as_matrix())?;
        io::write_matrix(&args.out.join("local.csv"), ids, fit.estimate.local_part().as_matrix())?;
        io::write_matrix(&args.out.join("residual.csv"), ids, fit.estimate.residual_part().as_matrix())?;
    }
    if args.cluster.is_some() {
        let g = cfg.groups.as_ref().expect("detected above");
        let labels: Vec<String> = g.membership().iter().map(usize::to_string).collect();
        io::write_labels(&args.out.join("membership.csv"), ids, "group", &labels)?;
    }
    extra.extend(fit_summary(&fit));
    for (k, v) in &extra {
        eprintln!("{k} = {v}");
    }
    write_manifest(&args.out, "estimate", echo, extra)
}

pub fn select(args: &SelectArgs, out: &mut dyn Write) -> CliResult<()> {
    let panel = io::read_returns(&args.returns)?;
    let spectrum = SampleSpectrum::new(&panel);
    let sel = select_global(&panel, &spectrum, args.kmax, args.groups, args.rmax, args.phi_scale)?;
    let ev = spectrum.eigen().values.as_slice();
    let w = |e: std::io::Error| CliError::io("<stdout>", e);
    if args.csv {
        writeln!(out, "variant,k_hat,global_factors,k1,k2,er1,er2,phi").map_err(w)?;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            sel.variant,
            sel.k_hat,
            sel.global_factors(),
            sel.k1,
            sel.k2,
            fmt_f64(sel.er1),
            fmt_f64(sel.er2),
            fmt_f64(sel.phi_p)
        )
        .map_err(w)?;
        writeln!(out).map_err(w)?;
        writeln!(out, "m,eigenvalue,ratio").map_err(w)?;
        for (m, r) in sel.ratios.iter().enumerate() {
            writeln!(out, "{},{},{}", m + 1, fmt_f64(ev[m]), fmt_f64(*r)).map_err(w)?;
        }
    } else {
        writeln!(out, "variant:        {}", sel.variant).map_err(w)?;
        writeln!(out, "k_hat:          {}", sel.k_hat).map_err(w)?;
        writeln!(out, "global factors: {}", sel.global_factors()).map_err(w)?;
        writeln!(out, "k1, k2:         {}, {}", sel.k1, sel.k2).map_err(w)?;
        writeln!(out, "ER(k1), ER(k2): {:.4}, {:.4}", sel.er1, sel.er2).map_err(w)?;
        writeln!(out, "phi:            {:.4}", sel.phi_p).map_err(w)?;
        writeln!(out, "\n   m   eigenvalue      ratio").map_err(w)?;
        for (m, r) in sel.ratios.iter().enumerate() {
            let mark = if m + 1 == sel.k1 {
                " <- k1"
            } else if m + 1 == sel.k2 {
                " <- k2"
            } else {
                ""
            };
            writeln!(out, "{:>4} {:>12.5} {:>10.4}{mark}", m + 1, ev[m], r).map_err(w)?;
        }
    }
    Ok(())
}

pub fn cluster(args: &ClusterArgs, echo: &Echo) -> CliResult<()> {
    let panel = io::read_returns(&args.returns)?;
    let d = detect_groups(
        &panel,
        args.cluster,
        args.k,
        args.kmax,
        args.phi_scale,
        args.seed,
        args.truth.as_deref(),
    )?;
    prepare_out(&args.out)?;
    let labels: Vec<String> = d.groups.membership().iter().map(usize::to_string).collect();
    io::write_labels(&args.out.join("membership.csv"), panel.asset_ids(), "group", &labels)?;
    let mut extra = vec![
        ("global_factors_removed".to_string(), d.k_removed.to_string()),
        ("group_sizes".to_string(), join(&d.groups.group_sizes())),
    ];
    if let Some(rate) = d.misclassification {
        extra.push(("misclassification".into(), fmt_f64(rate)));
        eprintln!("misclassification against the truth file: {rate:.4}");
    }
    write_manifest(&args.out, "cluster", echo, extra)
}

fn parse_methods(tags: &[String]) -> CliResult<Vec<SimMethod>> {
    tags.iter()
        .map(|t| {
            SimMethod::from_tag(t).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown simulation method '{t}' (expected one of {})",
                    join(&SimMethod::ALL.iter().map(|m| m.tag()).collect::<Vec<_>>())
                ))
            })
        })
        .collect()
}

fn whole(v: f64, what: &str) -> CliResult<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(CliError::Config(format!("{what} grid values must be positive integers, got {v}")))
    }
}

pub fn simulate(args: &SimulateArgs, echo: &Echo) -> CliResult<()> {
    let methods = parse_methods(&args.methods)?;
    let spec = |p: usize, j: usize| DgpSpec {
        m: args.m,
        ..DgpSpec::new(p, args.t, j, args.k, args.r)
    };
    let grid = args
        .values
        .iter()
        .map(|&v| {
            Ok(match args.vary {
                VaryArg::P => GridPoint::new(v, spec(whole(v, "p")?, args.groups)),
                VaryArg::Groups => {
                    let j = whole(v, "group count")?;
                    GridPoint::new(v, spec(j * args.group_size, j))
                }
                VaryArg::Mix => GridPoint {
                    mix_rate: v,
                    ..GridPoint::new(v, spec(args.p, args.groups))
                },
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut cfg = ReplicationConfig::new(grid, methods, args.reps, args.seed);
    cfg.target = match args.target {
        TargetArg::Full => Target::Full,
        TargetArg::Local => Target::LocalBlocks,
    };
    if args.oracle_counts {
        cfg.counts = FactorCounts::Oracle;
    }
    cfg.rule = match args.rule {
        RuleArg::Soft => ThresholdRule::Soft,
        RuleArg::Hard => ThresholdRule::Hard,
        RuleArg::Sector => return Err(CliError::Config("sector thresholding is not available in simulations".into())),
    };
    cfg.tau = args.tau;
    cfg.r_max = args.rmax;
    cfg.phi_scale = args.phi_scale;

    let report = run_replications(&cfg)?;
    prepare_out(&args.out)?;
    let path = args.out.join("errors.csv");
    let mut w = io::create(&path)?;
    let e = |err| CliError::io(&path, err);
    writeln!(w, "grid,method,norm,mean,stderr,reps").map_err(e)?;
    for row in report.rows() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            row.grid,
            row.method,
            row.norm.tag(),
            fmt_f64(row.mean),
            fmt_f64(row.stderr),
            row.reps
        )
        .map_err(e)?;
    }
    w.flush().map_err(e)?;

    let mut selected_k = Vec::new();
    for cells in &report.cells {
        let mean = cells.iter().map(|c| c.k_hat as f64).sum::<f64>() / cells.len() as f64;
        selected_k.push(format!("{mean:.4}"));
    }
    let extra = vec![
        ("rng".to_string(), "chacha8; stream (grid << 32) | replication".to_string()),
        ("mean_selected_k".to_string(), selected_k.join(",")),
    ];
    write_manifest(&args.out, "simulate", echo, extra)
}

pub fn generate(args: &GenerateArgs, echo: &Echo) -> CliResult<()> {
    let spec = DgpSpec {
        m: args.m,
        ..DgpSpec::new(args.p, args.t, args.groups, args.k, args.r)
    };
    spec.validate()?;
    let model = generate_model(&spec, args.seed)?;
    let panel = simulate_panel(&model, args.seed.wrapping_add(1))?;
    prepare_out(&args.out)?;
    io::write_returns(&args.out.join("returns.csv"), &panel)?;
    let labels: Vec<String> = model.groups.membership().iter().map(|g| format!("g{g}")).collect();
    io::write_labels(&args.out.join("membership.csv"), panel.asset_ids(), "group", &labels)?;
    io::write_matrix(&args.out.join("population.csv"), panel.asset_ids(), model.population.as_matrix())?;
    write_manifest(
        &args.out,
        "generate",
        echo,
        vec![("panel_seed".into(), args.seed.wrapping_add(1).to_string())],
    )
}

pub fn run_backtest(args: &BacktestArgs, echo: &Echo, out: &mut dyn Write) -> CliResult<()> {
    let panel = io::read_returns(&args.returns)?;
    let groups = args
        .membership
        .as_deref()
        .map(|p| io::read_membership(p, panel.asset_ids()).map(|(g, _)| g))
        .transpose()?;
    let schedule = Schedule {
        window: args.window,
        hold: args.hold,
        calendar: !args.no_calendar,
    };
    let mut reports = Vec::new();
    for method in &args.method {
        let cfg = estimator_config(method, &args.factors, groups.clone(), &panel)?;
        reports.extend(backtest(&panel, &schedule, &cfg, &args.c_grid, args.repair)?);
    }

    prepare_out(&args.out)?;
    let path = args.out.join("risk.csv");
    let mut w = io::create(&path)?;
    let e = |err| CliError::io(&path, err);
    writeln!(w, "method,c,start,end,label,risk,k,converged").map_err(e)?;
    for r in &reports {
        for p in &r.periods {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.method,
                r.c,
                p.start,
                p.end,
                p.label.as_deref().unwrap_or(""),
                fmt_f64(p.risk),
                p.k,
                p.converged
            )
            .map_err(e)?;
        }
    }
    w.flush().map_err(e)?;

    let path = args.out.join("summary.csv");
    let mut w = io::create(&path)?;
    let e = |err| CliError::io(&path, err);
    writeln!(w, "method,c,overall_risk,periods,skipped").map_err(e)?;
    let so = |err| CliError::io("<stdout>", err);
    writeln!(out, "{:<12} {:>5} {:>14} {:>8} {:>8}", "method", "c", "risk", "periods", "skipped").map_err(so)?;
    for r in &reports {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.method,
            r.c,
            fmt_f64(r.overall_risk),
            r.periods.len(),
            r.skipped.len()
        )
        .map_err(e)?;
        writeln!(
            out,
            "{:<12} {:>5} {:>14.6e} {:>8} {:>8}",
            r.method,
            r.c,
            r.overall_risk,
            r.periods.len(),
            r.skipped.len()
        )
        .map_err(so)?;
    }
    w.flush().map_err(e)?;
    write_manifest(&args.out, "backtest", echo, Vec::new())
}
