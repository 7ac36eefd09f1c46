//! Command-line front end: graph generation/inspection, container
//! enumeration and audits, polymer expansion reports, hard-core oracles and
//! samplers, the Z-approximation pipeline, and corpus runs.
//!
//! Exit codes: 0 success, 1 usage, 2 validation/guard, 3 invariant.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::error::{validation, Error, Result};
use crate::graph::{self, BipartiteGraph, Side};
use crate::hardcore::{self, IndependentSet, MuHatSampler};
use crate::polymer;
use crate::rat::{parse_decimal, to_f64, Rat};
use crate::rng::stream_rng;

#[derive(Parser)]
#[command(name = "hclab", version, about = "Desk-scale hard-core model lab on bipartite graphs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate and inspect bipartite graphs
    Graph {
        #[command(subcommand)]
        cmd: GraphCmd,
    },
    /// Defect-set enumeration and container audits
    Containers {
        #[command(subcommand)]
        cmd: ContainersCmd,
    },
    /// Polymer models and cluster expansions
    Polymer {
        #[command(subcommand)]
        cmd: PolymerCmd,
    },
    /// Exact oracles, samplers and dynamics
    Hardcore {
        #[command(subcommand)]
        cmd: HardcoreCmd,
    },
    /// Truncated-expansion approximation of Z
    Fptas {
        #[command(subcommand)]
        cmd: FptasCmd,
    },
    /// Batched experiment runs
    Corpus {
        #[command(subcommand)]
        cmd: CorpusCmd,
    },
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Generate a graph and write it as JSON
    Gen(GenArgs),
    /// Degree/biregularity report, optional expansion certificate
    Check(CheckArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Hypercube dimension d (even/odd layers as the two sides)
    #[arg(long)]
    hypercube: Option<usize>,
    /// Random d-regular bipartite graph: vertices per side
    #[arg(long)]
    random: Option<usize>,
    /// Degree for --random
    #[arg(long, default_value_t = 3)]
    degree: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    graph: PathBuf,
    /// Check α-expansion of both sides
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum ContainersCmd {
    /// List 𝒢(a,g) exactly
    Enumerate(EnumArgs),
    /// Weighted-sum audit with the full φ/ψ family pipeline
    Audit(AuditArgs),
    /// Audit specialised to d-regular expanders
    ExpanderAudit(AuditArgs),
}

#[derive(Args)]
struct EnumArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    a: usize,
    #[arg(long)]
    g: usize,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    a: usize,
    #[arg(long)]
    g: usize,
    #[arg(long)]
    lambda: String,
    #[arg(long, default_value = "64")]
    gamma: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum PolymerCmd {
    /// Cluster-expansion report (L/T series, Ξ, tails, convergence check)
    Expand(ExpandArgs),
    /// Convergence-criterion check with f(A) = |A|, g(A) = 0
    Kp(ExpandArgs),
}

#[derive(Args)]
struct ExpandArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Defect side: x (even layer) or y (odd layer)
    #[arg(long, default_value = "x")]
    side: String,
    #[arg(long)]
    lambda: String,
    #[arg(long, default_value_t = 6)]
    kmax: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum HardcoreCmd {
    /// Exact partition function Z_G(λ)
    Oracle {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        lambda: String,
    },
    /// Draws from the two-sided defect sampler, with an exact-law check
    Sample {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        lambda: String,
        #[arg(long, default_value_t = 1000)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Single-site dynamics run with an optional stationarity check
    Glauber {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        lambda: String,
        #[arg(long, default_value_t = 100_000)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Occupancy observables of the sampler on Q_d
    Thm1 {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        lambda: String,
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum FptasCmd {
    /// Truncated-expansion estimate of log Z with oracle comparison
    Approx {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value = "0")]
        alpha: String,
        #[arg(long)]
        lambda: String,
        #[arg(long)]
        eps: String,
    },
    /// Truncation-vs-error table
    Budget {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        lambda: String,
        #[arg(long, default_value_t = 6)]
        kmax: usize,
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Run every instance in a JSON config, aggregate to CSV
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            let _ = e.print();
            return match e.kind() {
                DisplayHelp | DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(Error::Invariant(m)) => {
            eprintln!("invariant violation: {m}");
            3
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Graph { cmd } => match cmd {
            GraphCmd::Gen(a) => graph_gen(a),
            GraphCmd::Check(a) => graph_check(a),
        },
        Cmd::Containers { cmd } => match cmd {
            ContainersCmd::Enumerate(a) => containers_enumerate(a),
            ContainersCmd::Audit(a) => containers_audit(a, false),
            ContainersCmd::ExpanderAudit(a) => containers_audit(a, true),
        },
        Cmd::Polymer { cmd } => match cmd {
            PolymerCmd::Expand(a) => polymer_expand(a, false),
            PolymerCmd::Kp(a) => polymer_expand(a, true),
        },
        Cmd::Hardcore { cmd } => hardcore_cmd(cmd),
        Cmd::Fptas { cmd } => fptas_cmd(cmd),
        Cmd::Corpus { cmd } => match cmd {
            CorpusCmd::Run { config, out_dir, csv } => corpus_run(&config, out_dir, csv),
        },
    }
}

fn parse_rat(s: &str) -> Result<Rat> {
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| Error::Validation(format!("bad rational {s}")))?;
        let d: i64 = d.trim().parse().map_err(|_| Error::Validation(format!("bad rational {s}")))?;
        if d == 0 {
            return validation("rational with zero denominator");
        }
        return Ok(crate::rat::rat(n, d));
    }
    parse_decimal(s)
}

fn parse_side(s: &str) -> Result<Side> {
    match s.to_ascii_lowercase().as_str() {
        "x" | "e" | "even" => Ok(Side::X),
        "y" | "o" | "odd" => Ok(Side::Y),
        other => validation(format!("unknown side {other:?} (use x or y)")),
    }
}

fn load_graph(path: &Path) -> Result<BipartiteGraph> {
    BipartiteGraph::load(path)
}

fn emit(summary: &str, value: &Value) {
    println!("{summary}");
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

// ---------------------------------------------------------------------------
// graph
// ---------------------------------------------------------------------------

fn graph_gen(a: GenArgs) -> Result<()> {
    let g = match (a.hypercube, a.random) {
        (Some(d), None) => graph::hypercube(d)?,
        (None, Some(n)) => graph::random_regular_bipartite(n, a.degree, a.seed)?,
        _ => return validation("give exactly one of --hypercube D or --random N"),
    };
    g.save(&a.out)?;
    let (dx, dy, delta) = g.reference_degrees()?;
    emit(
        &format!(
            "wrote {} ({}+{} vertices, {} edges)",
            a.out.display(),
            g.x_count(),
            g.y_count(),
            g.edge_count()
        ),
        &json!({
            "path": a.out.display().to_string(),
            "x_count": g.x_count(),
            "y_count": g.y_count(),
            "edges": g.edge_count(),
            "d_x": dx, "d_y": dy, "delta": delta.to_string(),
            "seed": a.seed,
        }),
    );
    Ok(())
}

fn graph_check(a: CheckArgs) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let report = graph::degree_report(&g);
    let mut value = serde_json::to_value(&report)?;
    let mut summary = match g.reference_degrees() {
        Ok((dx, dy, delta)) if dx == dy && delta.is_integer() && to_f64(&delta) == 1.0 => {
            format!("{}: {}-regular bipartite", a.graph.display(), dx)
        }
        Ok((dx, dy, delta)) => format!(
            "{}: approximately ({dx},{dy})-biregular, delta = {}",
            a.graph.display(),
            delta
        ),
        Err(_) => format!("{}: not approximately biregular", a.graph.display()),
    };
    if let Some(alpha) = &a.alpha {
        let alpha = parse_rat(alpha)?;
        let exp = graph::check_alpha_expansion(&g, &alpha, a.seed);
        summary.push_str(&format!(
            "; alpha = {} expansion {}",
            to_f64(&alpha),
            if exp.holds_both() { "holds" } else { "FAILS" }
        ));
        value["expansion"] = serde_json::to_value(&exp)?;
        value["seed"] = json!(a.seed);
    }
    emit(&summary, &value);
    Ok(())
}

// ---------------------------------------------------------------------------
// containers
// ---------------------------------------------------------------------------

fn containers_enumerate(a: EnumArgs) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let inst = crate::containers::enumerate_gag(&g, a.a, a.g)?;
    if a.csv {
        let mut w = csv::Writer::from_writer(std::io::stdout());
        w.write_record(["a", "g", "t", "w", "members"])
            .and_then(|_| {
                let members = inst
                    .members
                    .iter()
                    .map(|m| format!("{:?}", m.members))
                    .collect::<Vec<_>>()
                    .join(";");
                w.write_record([
                    inst.a.to_string(),
                    inst.g.to_string(),
                    inst.t.to_string(),
                    inst.w.to_string(),
                    members,
                ])
            })
            .map_err(|e| Error::Validation(e.to_string()))?;
        w.flush()?;
        return Ok(());
    }
    emit(
        &format!("|G({},{})| = {} (t = {}, w = {})", inst.a, inst.g, inst.members.len(), inst.t, inst.w),
        &json!({
            "a": inst.a, "g": inst.g, "t": inst.t, "w": inst.w,
            "count": inst.members.len(),
            "members": inst.members.iter().map(|m| m.members.clone()).collect::<Vec<_>>(),
        }),
    );
    Ok(())
}

fn weight_audit_json(audit: &crate::containers::WeightAudit) -> Value {
    json!({
        "a": audit.a, "g": audit.g, "t": audit.t, "w": audit.w,
        "lambda": audit.lambda.to_string(),
        "instance_count": audit.instance_count,
        "lhs": audit.lhs.to_string(),
        "lhs_log": audit.lhs_log,
        "rhs_target_log": audit.rhs_target_log,
        "per_stage_bound_log": audit.per_stage_bound_log,
        "phi": audit.phi.as_ref().map(|p| p.to_string()),
        "gamma_prime": audit.gamma_prime.as_ref().map(|p| p.to_string()),
        "varphi_measured_log": audit.varphi_measured_log,
        "varphi_bound_log": audit.varphi_bound_log,
        "families": audit.family_rows.iter().map(|r| json!({
            "f_prime": r.f_prime.members,
            "witnesses": r.witness_count,
            "stage_sizes": r.stage_sizes,
            "total": r.total,
            "initial_bound_log": r.initial_bound_log,
            "total_bound_log": r.total_bound_log,
        })).collect::<Vec<_>>(),
        "notes": audit.notes,
    })
}

fn containers_audit(a: AuditArgs, expander: bool) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let lambda = parse_rat(&a.lambda)?;
    let gamma = parse_rat(&a.gamma)?;
    if expander {
        let audit = crate::containers::expander_container_audit(&g, a.a, a.g, &lambda, &gamma, a.seed)?;
        let mut value = weight_audit_json(&audit.base);
        value["d"] = json!(audit.d);
        value["alpha_measured"] = json!(audit.alpha);
        value["t_check"] = json!(audit.t_check);
        value["trivial_branch"] = json!(audit.trivial_branch);
        value["seed"] = json!(a.seed);
        emit(
            &format!(
                "expander audit a={} g={}: LHS = {}, t-check {}, alpha = {:.3}",
                a.a, a.g, audit.base.lhs, audit.t_check, audit.alpha
            ),
            &value,
        );
    } else {
        let audit = crate::containers::container_weight_audit(&g, a.a, a.g, &lambda, &gamma, a.seed)?;
        let mut value = weight_audit_json(&audit);
        value["seed"] = json!(a.seed);
        emit(
            &format!(
                "container audit a={} g={}: LHS = {} over {} instances, {} families",
                a.a, a.g, audit.lhs, audit.instance_count, audit.family_rows.len()
            ),
            &value,
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// polymer
// ---------------------------------------------------------------------------

fn polymer_expand(a: ExpandArgs, kp_only: bool) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let side = parse_side(&a.side)?;
    let lambda = parse_rat(&a.lambda)?;
    let n = g.side_count(side);
    let model = polymer::build_model(&g, side, n)?;
    let (dx, _, _) = g.reference_degrees()?;
    let f: Vec<f64> = model.sizes.iter().map(|&s| s as f64).collect();
    let zeros = vec![0.0; model.len()];
    let kp = polymer::kp_check(&model, &lambda, &f, &zeros, a.kmax.min(6))?;
    let kp_json = json!({
        "f_spec": "|A|", "g_spec": "0",
        "holds": kp.holds,
        "min_slack": kp.min_slack,
        "witnesses": kp.witnesses,
        "conclusion_holds": kp.conclusion_holds,
        "conclusion_min_slack": kp.conclusion_min_slack,
    });
    if kp_only {
        emit(
            &format!(
                "convergence criterion on side {side}: {} (min slack {:.6})",
                if kp.holds { "holds" } else { "FAILS" },
                kp.min_slack
            ),
            &kp_json,
        );
        return Ok(());
    }
    let report = polymer::expansion_report(&model, &lambda, a.kmax, dx)?;
    let mut value = serde_json::to_value(&report)?;
    value["kp"] = kp_json;
    value["side"] = json!(side.to_string());
    let summary = format!(
        "side {side}: {} polymers, T_{} = {:.6}{}",
        report.polymer_count,
        a.kmax + 1,
        report.t.last().copied().unwrap_or(0.0),
        report
            .log_xi
            .map(|x| format!(", log Xi = {x:.6}"))
            .unwrap_or_default()
    );
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&value)?)?;
        println!("{summary}; wrote {}", out.display());
    } else {
        emit(&summary, &value);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// hardcore
// ---------------------------------------------------------------------------

fn hardcore_cmd(cmd: HardcoreCmd) -> Result<()> {
    match cmd {
        HardcoreCmd::Oracle { graph, lambda } => {
            let g = load_graph(&graph)?;
            let lambda = parse_rat(&lambda)?;
            let z = hardcore::exact_z(&g, &lambda)?;
            emit(
                &format!("Z = {z}"),
                &json!({
                    "lambda": lambda.to_string(),
                    "z": z.to_string(),
                    "log_z": crate::rat::ln_rat(&z),
                }),
            );
        }
        HardcoreCmd::Sample { graph, lambda, n, seed } => {
            let g = load_graph(&graph)?;
            let lambda = parse_rat(&lambda)?;
            let sampler = MuHatSampler::new(&g, &lambda)?;
            let mut rng = stream_rng(seed, 0);
            let mut counts: BTreeMap<IndependentSet, u64> = BTreeMap::new();
            let mut sum_size = 0f64;
            for _ in 0..n {
                let (set, _) = sampler.sample(&g, &mut rng);
                sum_size += set.len() as f64;
                *counts.entry(set).or_default() += 1;
            }
            let tv = if g.vertex_count() <= 20 {
                let exact = sampler.exact_law(&g)?;
                Some(to_f64(&hardcore::tv_distance(
                    &hardcore::empirical_distribution(&counts),
                    &exact,
                )))
            } else {
                None
            };
            emit(
                &format!(
                    "{n} draws, mean size {:.4}{}",
                    sum_size / n as f64,
                    tv.map(|t| format!(", TV to exact law {t:.4}")).unwrap_or_default()
                ),
                &json!({
                    "lambda": lambda.to_string(),
                    "n": n, "seed": seed,
                    "mean_size": sum_size / n as f64,
                    "distinct_sets": counts.len(),
                    "tv_to_exact": tv,
                }),
            );
        }
        HardcoreCmd::Glauber { graph, lambda, steps, seed } => {
            let g = load_graph(&graph)?;
            let lambda = parse_rat(&lambda)?;
            let mut rng = stream_rng(seed, 0);
            let track = g.vertex_count() <= 20;
            let summary = hardcore::glauber_run(
                &g,
                &lambda,
                steps,
                &mut rng,
                &IndependentSet::empty(),
                (steps / 1000).max(1),
                track,
            )?;
            let tv = match (&summary.occupancy, g.vertex_count() <= 20) {
                (Some(occ), true) => {
                    let exact = hardcore::exact_mu(&g, &lambda)?;
                    Some(to_f64(&hardcore::tv_distance(
                        &hardcore::empirical_distribution(occ),
                        &exact,
                    )))
                }
                _ => None,
            };
            emit(
                &format!(
                    "{steps} steps, final |I| = {}{}",
                    summary.final_set.len(),
                    tv.map(|t| format!(", empirical TV to stationary law {t:.4}"))
                        .unwrap_or_default()
                ),
                &json!({
                    "lambda": lambda.to_string(),
                    "steps": steps, "seed": seed,
                    "final_size": summary.final_set.len(),
                    "tv_to_exact": tv,
                }),
            );
        }
        HardcoreCmd::Thm1 { d, lambda, n, seed } => {
            let lambda = parse_rat(&lambda)?;
            let report = hardcore::theorem1_observables(d, &lambda, n, seed)?;
            emit(
                &format!(
                    "Q_{d}: mean |I| = {:.4} (reference {:.4}), mean minority side {:.4} (reference {:.4})",
                    report.mean_size,
                    report.size_reference,
                    report.mean_min_side,
                    report.min_side_reference
                ),
                &serde_json::to_value(&report)?,
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fptas
// ---------------------------------------------------------------------------

fn fptas_cmd(cmd: FptasCmd) -> Result<()> {
    match cmd {
        FptasCmd::Approx { graph, alpha, lambda, eps } => {
            let g = load_graph(&graph)?;
            let alpha = parse_rat(&alpha)?;
            let lambda = parse_rat(&lambda)?;
            let eps = parse_rat(&eps)?;
            let r = crate::fptas::approx_log_z(&g, &alpha, &lambda, &eps)?;
            emit(
                &format!(
                    "logZ estimate {:.6} (k = {}, budget {}{})",
                    r.log_z_estimate,
                    r.k_truncation,
                    if r.budget_met { "met" } else { "NOT met" },
                    r.achieved_error
                        .map(|e| format!(", |error| = {e:.6}"))
                        .unwrap_or_default()
                ),
                &json!({
                    "logZ": r.log_z_estimate,
                    "eps": eps.to_string(),
                    "lambda": lambda.to_string(),
                    "alpha": alpha.to_string(),
                    "k": r.k_truncation,
                    "budget_met": r.budget_met,
                    "per_side": r.per_side.iter().map(|s| json!({
                        "side": s.side.to_string(),
                        "polymers": s.polymer_count,
                        "k_used": s.k_used,
                        "t": to_f64(&s.t_value),
                        "shells": s.shells,
                        "budget_met": s.budget_met,
                    })).collect::<Vec<_>>(),
                    "overlap": r.overlap.to_string(),
                    "oracle": r.oracle_log_z.map(|z| json!({
                        "logZ": z,
                        "abs_err": r.achieved_error,
                    })),
                }),
            );
        }
        FptasCmd::Budget { graph, lambda, kmax, csv: as_csv } => {
            let g = load_graph(&graph)?;
            let lambda = parse_rat(&lambda)?;
            let rep = crate::fptas::epsilon_budget_report(&g, &lambda, kmax)?;
            if as_csv {
                let mut w = csv::Writer::from_writer(std::io::stdout());
                w.write_record(["k", "t_x", "t_y", "shell_x", "shell_y", "logZ_est", "oracle_gap"])
                    .map_err(|e| Error::Validation(e.to_string()))?;
                for row in &rep.rows {
                    w.write_record([
                        row.k.to_string(),
                        row.t_x.to_string(),
                        row.t_y.to_string(),
                        row.shell_x.to_string(),
                        row.shell_y.to_string(),
                        row.log_z_estimate.to_string(),
                        row.oracle_gap.map(|v| v.to_string()).unwrap_or_default(),
                    ])
                    .map_err(|e| Error::Validation(e.to_string()))?;
                }
                w.flush()?;
                return Ok(());
            }
            emit(
                &format!(
                    "{} truncation rows{}{}",
                    rep.rows.len(),
                    rep.oracle_log_z
                        .map(|z| format!(", oracle logZ = {z:.6}"))
                        .unwrap_or_default(),
                    if rep.empty_models { " (no polymers: estimate exact)" } else { "" }
                ),
                &json!({
                    "lambda": lambda.to_string(),
                    "k_max": rep.k_max,
                    "empty_models": rep.empty_models,
                    "oracle_logZ": rep.oracle_log_z,
                    "rows": rep.rows.iter().map(|r| json!({
                        "k": r.k, "t_x": r.t_x, "t_y": r.t_y,
                        "shell_x": r.shell_x, "shell_y": r.shell_y,
                        "logZ_est": r.log_z_estimate,
                        "oracle_gap": r.oracle_gap,
                    })).collect::<Vec<_>>(),
                }),
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// corpus
// ---------------------------------------------------------------------------

#[derive(serde::Deserialize)]
struct CorpusConfig {
    instances: Vec<CorpusInstance>,
}

#[derive(Clone, serde::Deserialize)]
struct CorpusInstance {
    id: String,
    verb: String,
    #[serde(default)]
    graph: Option<String>,
    #[serde(default)]
    params: BTreeMap<String, Value>,
}

fn param_str(p: &BTreeMap<String, Value>, key: &str, default: &str) -> String {
    match p.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(v) => v.to_string(),
        None => default.to_string(),
    }
}

fn param_usize(p: &BTreeMap<String, Value>, key: &str, default: usize) -> usize {
    p.get(key).and_then(Value::as_u64).map(|v| v as usize).unwrap_or(default)
}

/// One corpus instance, evaluated to a machine-readable row.
fn run_instance(base: &Path, inst: &CorpusInstance) -> Result<Value> {
    let graph = || -> Result<BipartiteGraph> {
        let rel = inst
            .graph
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("instance {} needs a graph", inst.id)))?;
        load_graph(&base.join(rel))
    };
    let p = &inst.params;
    let lambda = parse_rat(&param_str(p, "lambda", "1"))?;
    match inst.verb.as_str() {
        "hardcore-oracle" => {
            let z = hardcore::exact_z(&graph()?, &lambda)?;
            Ok(json!({"z": z.to_string(), "log_z": crate::rat::ln_rat(&z)}))
        }
        "containers-audit" => {
            let g = graph()?;
            let audit = crate::containers::container_weight_audit(
                &g,
                param_usize(p, "a", 1),
                param_usize(p, "g", 1),
                &lambda,
                &parse_rat(&param_str(p, "gamma", "64"))?,
                p.get("seed").and_then(Value::as_u64).unwrap_or(0),
            )?;
            Ok(weight_audit_json(&audit))
        }
        "polymer-expand" => {
            let g = graph()?;
            let side = parse_side(&param_str(p, "side", "x"))?;
            let model = polymer::build_model(&g, side, g.side_count(side))?;
            let (dx, _, _) = g.reference_degrees()?;
            let rep = polymer::expansion_report(&model, &lambda, param_usize(p, "kmax", 6), dx)?;
            Ok(serde_json::to_value(&rep)?)
        }
        "fptas-approx" => {
            let g = graph()?;
            let r = crate::fptas::approx_log_z(
                &g,
                &parse_rat(&param_str(p, "alpha", "0"))?,
                &lambda,
                &parse_rat(&param_str(p, "eps", "0.05"))?,
            )?;
            Ok(json!({
                "logZ": r.log_z_estimate,
                "budget_met": r.budget_met,
                "abs_err": r.achieved_error,
            }))
        }
        other => validation(format!("unknown corpus verb {other:?}")),
    }
}

fn thread_cap() -> usize {
    std::env::var("HARDCORE_LAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn corpus_run(config: &Path, out_dir: Option<PathBuf>, csv_out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(config)?;
    let cfg: CorpusConfig = serde_json::from_str(&text)?;
    let base = config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let threads = thread_cap().min(cfg.instances.len().max(1));

    let mut results: Vec<Option<(String, String, std::result::Result<Value, String>)>> =
        vec![None; cfg.instances.len()];
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for shard in 0..threads {
            let base = base.clone();
            let instances = &cfg.instances;
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                for (i, inst) in instances.iter().enumerate() {
                    if i % threads != shard {
                        continue;
                    }
                    let res = run_instance(&base, inst).map_err(|e| e.to_string());
                    out.push((i, inst.id.clone(), inst.verb.clone(), res));
                }
                out
            }));
        }
        for h in handles {
            for (i, id, verb, res) in h.join().expect("worker panicked") {
                results[i] = Some((id, verb, res));
            }
        }
    });

    let mut rows = Vec::new();
    let mut failures = 0usize;
    for entry in results.into_iter().flatten() {
        let (id, verb, res) = entry;
        match res {
            Ok(value) => {
                if let Some(dir) = &out_dir {
                    std::fs::create_dir_all(dir)?;
                    std::fs::write(
                        dir.join(format!("{id}.json")),
                        serde_json::to_string_pretty(&value)?,
                    )?;
                }
                rows.push([id, verb, "ok".into(), serde_json::to_string(&value)?]);
            }
            Err(msg) => {
                failures += 1;
                rows.push([id, verb, "fail".into(), msg]);
            }
        }
    }
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["id", "verb", "status", "detail"])
            .map_err(|e| Error::Validation(e.to_string()))?;
        for row in &rows {
            w.write_record(row).map_err(|e| Error::Validation(e.to_string()))?;
        }
        w.flush()?;
    }
    if let Some(path) = &csv_out {
        std::fs::write(path, &buf)?;
        println!(
            "{} instances, {} failures; wrote {}",
            rows.len(),
            failures,
            path.display()
        );
    } else {
        std::io::stdout().write_all(&buf)?;
    }
    if failures > 0 {
        return validation(format!("{failures} corpus instances failed"));
    }
    Ok(())
}
