use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::{json, Map, Value};

use rare_indep::bit::{select_s_power_floor, select_s_power_gap, select_s_variance, PowerInputs};
use rare_indep::inference::{local_power_threshold, power_first_order, power_highdim, Xi02Reference};
use rare_indep::sim::{
    benchmark_complexity, figure1_phenomenon, run_erp, BenchTarget, Family, Figure1Scenario, MethodConfig,
    ScenarioSpec, FIGURE1_GRID,
};
use rare_indep::{draw_subsample, run_test, ClassicalKind, InferenceChoice, KernelKind, KernelSpec, TestConfig};

use crate::error::CliError;
use crate::ingest::{ingest_csv, write_csv, Ingested};
use crate::output::{csv_table, emit, json, number, object, Format};
use crate::{
    BenchArgs, Command, DataArgs, DescribeArgs, Global, InferenceArg, KernelArgs, MethodArg, PlanArgs, PowerInputArgs,
    PowerKind, ReferenceArg, SelectRule, SimulateArgs, TestArgs,
};

pub fn run(global: &Global, command: Command) -> Result<(), CliError> {
    match command {
        Command::Test(args) => test(global, args),
        Command::SubsamplePlan(args) => subsample_plan(global, args),
        Command::SelectS(rule) => select_s(global, rule),
        Command::Power(kind) => power(global, kind),
        Command::Simulate(args) => simulate(global, args),
        Command::Bench(args) => bench(global, args),
        Command::Describe(args) => describe(global, args),
    }
}

fn load(data: &DataArgs) -> Result<Ingested, CliError> {
    let mut ingested = ingest_csv(&data.input, &data.label, &data.features)?;
    if ingested.dropped > 0 {
        eprintln!("dropped {} rows with missing or unparseable values", ingested.dropped);
    }
    if data.standardize {
        ingested.sample = ingested.sample.standardize()?;
    }
    Ok(ingested)
}

/// Renders one record (JSON by default) or a table (CSV by default).
fn emit_records(global: &Global, rows: Vec<Map<String, Value>>, table: bool) -> Result<(), CliError> {
    let format = global.format.unwrap_or(if table { Format::Csv } else { Format::Json });
    let text = match format {
        Format::Csv => csv_table(&rows)?,
        Format::Json if table => json(&Value::Array(rows.into_iter().map(Value::Object).collect()))?,
        Format::Json => json(&Value::Object(rows.into_iter().next().unwrap_or_default()))?,
    };
    emit(&text, global.output.as_deref())
}

/// A single number: bare text by default.
fn emit_scalar(global: &Global, name: &str, value: Value) -> Result<(), CliError> {
    match global.format {
        None => {
            let text = match &value {
                Value::Number(n) if n.is_f64() => number(n.as_f64().unwrap_or(f64::NAN)),
                other => other.to_string(),
            };
            emit(&(text + "\n"), global.output.as_deref())
        }
        Some(_) => {
            let mut m = Map::new();
            m.insert(name.to_string(), value);
            emit_records(global, vec![m], false)
        }
    }
}

fn kernel_spec(args: &KernelArgs, rare_classes: usize) -> Result<KernelSpec<f64>, CliError> {
    let kind: KernelKind = args.kernel.parse()?;
    let mut params = BTreeMap::new();
    if let Some(m) = args.m {
        params.insert("m".to_string(), m as f64);
    }
    if let Some(c) = args.c_sigma2 {
        params.insert("c_sigma2".to_string(), c);
    }
    params.insert("rare_classes".to_string(), rare_classes as f64);
    Ok(KernelSpec::from_kind(kind, &params)?)
}

fn inference_choice(arg: InferenceArg) -> InferenceChoice {
    match arg {
        InferenceArg::Auto => InferenceChoice::Auto,
        InferenceArg::Asymptotic => InferenceChoice::Asymptotic,
        InferenceArg::Permutation => InferenceChoice::Permutation,
        InferenceArg::Highdim => InferenceChoice::Highdim,
    }
}

fn test(global: &Global, args: TestArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let s = match (args.method, args.s) {
        (MethodArg::Bit, Some(s)) if s >= 2 => Some(s),
        (MethodArg::Bit, Some(s)) => return Err(CliError::usage(format!("--s must be at least 2, got {s}"))),
        (MethodArg::Bit, None) => return Err(CliError::usage("--method bit requires --s")),
        (MethodArg::Rit, Some(_)) => return Err(CliError::usage("--s applies to --method bit only")),
        (MethodArg::Rit, None) => None,
    };
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::usage("--alpha must lie in (0, 1)"));
    }
    let ingested = load(&args.data)?;
    let groups = ingested.sample.group_by_label()?;
    let kernel = kernel_spec(&args.kernel, groups.n_classes() - 1)?;
    let inference = if args.highdim { InferenceChoice::Highdim } else { inference_choice(args.inference) };
    let config = TestConfig {
        kernel,
        s,
        inference,
        permutations: args.permutations,
        budget: args.budget,
        xi02_reference: match args.xi02_reference {
            ReferenceArg::Controls => Xi02Reference::Controls,
            ReferenceArg::Pooled => Xi02Reference::Pooled,
        },
        seed: global.seed,
    };
    let outcome = run_test(&groups, &config)?;
    let mut record = object(serde_json::to_value(&outcome)?);
    record.insert("alpha".into(), json!(args.alpha));
    record.insert("reject".into(), json!(outcome.rejects(args.alpha)));
    record.insert("class_counts".into(), json!(groups.counts()));
    record.insert("dropped_rows".into(), json!(ingested.dropped));
    record.insert("wall_time_ms".into(), json!(start.elapsed().as_secs_f64() * 1e3));
    emit_records(global, vec![record], false)
}

fn subsample_plan(global: &Global, args: PlanArgs) -> Result<(), CliError> {
    let ingested = load(&args.data)?;
    let groups = ingested.sample.group_by_label()?;
    let plan = draw_subsample(&groups, args.s, args.m0, global.seed)?;
    let retained: Vec<usize> = groups
        .original_indices(0)
        .iter()
        .zip(&plan.inclusion)
        .filter(|(_, &keep)| keep)
        .map(|(&i, _)| i)
        .collect();
    let mut record = object(serde_json::to_value(&plan)?);
    record.insert("n0".into(), json!(groups.n0()));
    record.insert("n1".into(), json!(groups.n1()));
    record.insert("nominal_count".into(), json!(plan.nominal_count(groups.n1())));
    record.insert("retained_rows".into(), json!(retained));
    emit_records(global, vec![record], false)
}

fn power_inputs(a: PowerInputArgs) -> PowerInputs {
    PowerInputs { n1: a.n1, m0: a.m0, m1: a.m1, xi01: a.xi01, xi10: a.xi10, mu0: a.mu0, alpha: a.alpha }
}

fn select_s(global: &Global, rule: SelectRule) -> Result<(), CliError> {
    let s = match rule {
        SelectRule::Variance { n1, epsilon } => select_s_variance(n1, epsilon)?,
        SelectRule::PowerFloor { inputs, beta } => select_s_power_floor(&power_inputs(inputs), beta)?,
        SelectRule::PowerGap { inputs, epsilon } => select_s_power_gap(&power_inputs(inputs), epsilon)?,
    };
    emit_scalar(global, "s", json!(s))
}

fn power(global: &Global, kind: PowerKind) -> Result<(), CliError> {
    let (name, value) = match kind {
        PowerKind::FirstOrder { mu0, n1, m0, m1, xi01, alpha, s, xi10 } => {
            let bit = s.zip(xi10);
            ("power", power_first_order(mu0, n1, m0, m1, xi01, alpha, bit)?)
        }
        PowerKind::Highdim { mu0, n1, m1, xi02, alpha } => ("power", power_highdim(mu0, n1, m1, xi02, alpha)?),
        PowerKind::LocalThreshold { beta, alpha, mu_g1, xi } => {
            ("threshold", local_power_threshold(beta, alpha, mu_g1, xi)?)
        }
    };
    emit_scalar(global, name, json!(value))
}

/// Scenario and method defaults of a named study configuration.
struct Preset {
    family: Family,
    n: usize,
    n1: usize,
    p: Option<usize>,
    kernel: KernelKind,
    inference: InferenceChoice,
    reps: usize,
    permutations: usize,
}

fn preset(name: &str, full: bool) -> Option<Preset> {
    let (stem, example) = name.rsplit_once('_')?;
    let second = match example {
        "eg1" => false,
        "eg2" => true,
        _ => return None,
    };
    if let Some(kernel) = stem.strip_prefix("table3_") {
        let kernel = match kernel {
            "pearson" => KernelKind::RescaledPearson,
            "kendall" => KernelKind::RescaledKendall,
            _ => return None,
        };
        return Some(Preset {
            family: if second { Family::FirstOrderEg2 } else { Family::FirstOrderEg1 },
            n: 100_000,
            n1: 50,
            p: None,
            kernel,
            inference: InferenceChoice::Auto,
            reps: 1000,
            permutations: 199,
        });
    }
    let kernel = match stem.strip_prefix("table_d4_")? {
        "dcov" => KernelKind::RescaledDcov,
        "ipcov" => KernelKind::RescaledIpcov,
        _ => return None,
    };
    Some(Preset {
        family: if second { Family::SecondOrderEg2 } else { Family::SecondOrderEg1 },
        n: if full { 10_000 } else { 2_050 },
        n1: 50,
        p: Some(50),
        kernel,
        inference: InferenceChoice::Permutation,
        reps: if full { 1000 } else { 200 },
        permutations: if full { 999 } else { 199 },
    })
}

fn simulate(global: &Global, args: SimulateArgs) -> Result<(), CliError> {
    let figure = match args.family.as_str() {
        "figure1" => Some(vec![Figure1Scenario::FixedShare, Figure1Scenario::FixedCases]),
        "figure1_fixed_share" => Some(vec![Figure1Scenario::FixedShare]),
        "figure1_fixed_cases" => Some(vec![Figure1Scenario::FixedCases]),
        _ => None,
    };
    if let Some(scenarios) = figure {
        let reps = args.reps.unwrap_or(if args.full { 1000 } else { 500 });
        let mut rows = Vec::new();
        for sc in scenarios {
            for row in figure1_phenomenon(sc, &FIGURE1_GRID, reps, args.alpha, global.seed)? {
                rows.push(object(serde_json::to_value(row)?));
            }
        }
        return emit_records(global, rows, true);
    }

    let base = match preset(&args.family, args.full) {
        Some(p) => p,
        None => {
            let family: Family = args.family.parse()?;
            let (n, n1) = match (args.n, args.n1) {
                (Some(n), Some(n1)) => (n, n1),
                _ => return Err(CliError::usage(format!("family {family} needs --n and --n1"))),
            };
            let second = matches!(family, Family::SecondOrderEg1 | Family::SecondOrderEg2);
            Preset {
                family,
                n,
                n1,
                p: None,
                kernel: if second { KernelKind::RescaledDcov } else { KernelKind::RescaledKendall },
                inference: InferenceChoice::Auto,
                reps: 1000,
                permutations: 199,
            }
        }
    };
    let mut spec = ScenarioSpec::new(base.family, args.n.unwrap_or(base.n), args.n1.unwrap_or(base.n1))
        .with_reps(args.reps.unwrap_or(base.reps))
        .with_alpha(args.alpha)
        .with_seed(global.seed);
    if let Some(p) = args.p.or(base.p) {
        spec = spec.with_p(p);
    }
    if let Some(e) = args.effect {
        spec = spec.with_effect(e);
    }
    if let Some(g) = args.mixture_shift {
        spec = spec.with_mixture_shift(g);
    }
    if args.null {
        spec = spec.null();
    }
    let method = match &args.classical {
        Some(c) => {
            if args.s.is_some() {
                return Err(CliError::usage("--s applies to rescaled kernels only"));
            }
            MethodConfig::classical(c.parse::<ClassicalKind>()?)
        }
        None => {
            let kind = match &args.kernel {
                Some(k) => k.parse::<KernelKind>()?,
                None => base.kernel,
            };
            let mut m = MethodConfig::rescaled(kind)
                .with_inference(args.inference.map(inference_choice).unwrap_or(base.inference))
                .with_permutations(args.permutations.unwrap_or(base.permutations));
            if let Some(v) = args.m {
                m = m.with_param("m", v as f64);
            }
            if let Some(v) = args.c_sigma2 {
                m = m.with_param("c_sigma2", v);
            }
            if let Some(s) = args.s {
                m = m.boosted(s);
            }
            m
        }
    };
    let report = run_erp(&spec, &method)?;
    let mut row = Map::new();
    row.insert("family".into(), json!(args.family));
    row.insert("n".into(), json!(spec.n));
    row.insert("n1".into(), json!(spec.n1));
    row.insert("p".into(), json!(spec.p));
    row.insert("effect".into(), json!(spec.effect));
    row.insert("method".into(), json!(report.method_label));
    row.insert("reps".into(), json!(report.reps));
    row.insert("alpha".into(), json!(spec.alpha));
    row.insert("erp".into(), json!(report.erp));
    row.insert("mc_se".into(), json!(report.mc_se));
    row.insert("rejections".into(), json!(report.rejections));
    row.insert("seed".into(), json!(spec.seed));
    row.insert("wall_time_ms".into(), json!(report.wall_time_ms));
    emit_records(global, vec![row], true)
}

fn bench(global: &Global, args: BenchArgs) -> Result<(), CliError> {
    let target: BenchTarget = args.target.parse()?;
    let sizes = if args.sizes.is_empty() { target.default_sizes() } else { args.sizes };
    let report = benchmark_complexity(target, &sizes, args.trials, global.seed)?;
    let rows = report
        .points
        .iter()
        .map(|p| {
            let mut m = object(serde_json::to_value(p).unwrap_or(Value::Null));
            m.insert("target".into(), json!(args.target));
            m.insert("slope".into(), json!(report.slope));
            m
        })
        .collect();
    emit_records(global, rows, true)
}

fn describe(global: &Global, args: DescribeArgs) -> Result<(), CliError> {
    let ingested = load(&args.data)?;
    if let Some(path) = &args.write_clean {
        write_csv(&ingested, path)?;
    }
    let record = object(json!({
        "n": ingested.sample.n(),
        "p": ingested.sample.p(),
        "class_counts": ingested.sample.class_counts(),
        "dropped_rows": ingested.dropped,
        "label": ingested.label_name,
        "features": ingested.feature_names,
    }));
    emit_records(global, vec![record], false)
}
