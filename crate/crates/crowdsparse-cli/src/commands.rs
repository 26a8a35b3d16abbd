//! One function per subcommand. Each loads its inputs, runs the library,
//! writes the result files, and finishes with a manifest in the same
//! directory. All numbers are written in shortest round-trip form, so reruns
//! are byte-identical regardless of thread count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crowdsparse::baselines::{majority_logistic, oracle_logistic};
use crowdsparse::data::{load_features_csv, load_votes_csv};
use crowdsparse::em::predict_with_votes;
use crowdsparse::logreg::sigmoid;
use crowdsparse::selection::{
    compare_methods, default_grid, fit_with_majority_init, select_lambda_cv, select_lambda_run,
    LambdaRow, Method, MethodRow, SelectionRun,
};
use crowdsparse::simulate::{estimate_bayes_risk, generate, SimulationConfig};
use crowdsparse::{
    CrowdParams, Dataset, EmConfig, Error, ModelFile, Result, SolverConfig, SplitSpec,
};

use crate::manifest::{usize_value, Manifest};
use crate::{CompareArgs, FitArgs, FitMethod, PredictArgs, SelectArgs, SimulateArgs};

/// Monte-Carlo draws behind the Bayes-risk estimate recorded by `simulate`.
const BAYES_MC_N: usize = 200_000;

pub fn simulate(args: &SimulateArgs) -> Result<String> {
    let mut manifest = Manifest::new("simulate");
    let text = fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let config: SimulationConfig =
        toml::from_str(&text).map_err(|e| config_error(&args.config, &text, &e))?;

    let scenario = generate(&config)?;
    let bayes = estimate_bayes_risk(&config, BAYES_MC_N)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let features = args.out.join("features.csv");
    let votes = args.out.join("votes.csv");
    let labels = args.out.join("labels.csv");
    scenario
        .dataset
        .write_csv(&features, &votes, Some(&labels))?;

    manifest.input("config", &args.config);
    manifest.seed("seed", config.seed);
    if let Some(vs) = config.vote_seed {
        manifest.seed("vote_seed", vs);
    }
    manifest.param(
        "scenario",
        toml::Value::try_from(&config)
            .map_err(|e| Error::Invalid(format!("scenario serialization: {e}")))?,
    );
    manifest.param("bayes_mc_n", usize_value(BAYES_MC_N));
    manifest.output("features", &features);
    manifest.output("votes", &votes);
    manifest.output("labels", &labels);
    manifest.result("bayes_risk", bayes);
    manifest.result("n", usize_value(scenario.dataset.n()));
    manifest.result("features_per_unit", usize_value(scenario.dataset.k()));
    manifest.result("experts", usize_value(scenario.dataset.d()));
    manifest.write(&args.out)?;

    Ok(format!(
        "wrote {} units x {} features, {} experts to {} (bayes risk ~ {:.4})",
        scenario.dataset.n(),
        scenario.dataset.k(),
        scenario.dataset.d(),
        args.out.display(),
        bayes
    ))
}

pub fn fit(args: &FitArgs) -> Result<String> {
    let mut manifest = Manifest::new("fit");
    let raw = Dataset::load_csv(&args.features, &args.votes, args.labels.as_deref())?;
    let (ds, standardize) = if args.standardize {
        let (ds, record) = raw.standardize()?;
        (ds, Some(record))
    } else {
        (raw, None)
    };

    let config = EmConfig {
        lambda: args.lambda,
        restarts: args.restarts,
        seed: args.seed,
        ..EmConfig::default()
    };
    let solver = SolverConfig::default();

    let (params, flipped, converged, posterior): (CrowdParams, bool, bool, Vec<f64>) =
        match args.method {
            FitMethod::Em => {
                let fit = fit_with_majority_init(&ds, args.lambda, &config, None)?;
                (
                    fit.params,
                    fit.flipped,
                    fit.em_converged,
                    fit.posterior,
                )
            }
            FitMethod::Majority => {
                let coef = majority_logistic(&ds, args.lambda, &solver)?;
                linear_as_crowd(&ds, coef.values, coef.converged)
            }
            FitMethod::Oracle => {
                let coef = oracle_logistic(&ds, args.lambda, &solver)?;
                linear_as_crowd(&ds, coef.values, coef.converged)
            }
        };

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let model_path = args.out.join("model.txt");
    let model = ModelFile {
        params,
        lambda: args.lambda,
        flipped,
        standardize,
    };
    model.save(&model_path)?;
    let posterior_path = args.out.join("posterior.csv");
    write_column(&posterior_path, &posterior)?;

    manifest.input("features", &args.features);
    manifest.input("votes", &args.votes);
    if let Some(labels) = &args.labels {
        manifest.input("labels", labels);
    }
    manifest.seed("seed", args.seed);
    manifest.param("lambda", args.lambda);
    manifest.param("method", method_name(args.method));
    manifest.param("restarts", usize_value(args.restarts));
    manifest.param("standardize", args.standardize);
    manifest.output("model", &model_path);
    manifest.output("posterior", &posterior_path);
    manifest.result("converged", converged);
    manifest.result("flipped", flipped);
    manifest.write(&args.out)?;

    Ok(format!(
        "fit {} at lambda {} on {} units; model in {}",
        method_name(args.method),
        args.lambda,
        ds.n(),
        model_path.display()
    ))
}

pub fn select(args: &SelectArgs) -> Result<String> {
    let mut manifest = Manifest::new("select");
    let ds = Dataset::load_csv(&args.features, &args.votes, args.labels.as_deref())?;
    let config = EmConfig {
        restarts: args.restarts,
        seed: args.seed,
        ..EmConfig::default()
    };

    let run: SelectionRun = match args.cv {
        None => {
            let (train, test) = ds.split(&SplitSpec::new(args.test_fraction, args.seed))?;
            let grid = resolve_grid(args.grid.as_deref(), args.grid_size, &train)?;
            manifest.param("grid", grid_values(&grid));
            manifest.param("test_fraction", args.test_fraction);
            select_lambda_run(&train, &test, &grid, &config)?
        }
        Some(folds) => {
            let grid = resolve_grid(args.grid.as_deref(), args.grid_size, &ds)?;
            manifest.param("grid", grid_values(&grid));
            manifest.param("cv", usize_value(folds));
            select_lambda_cv(&ds, folds, &grid, &config)?
        }
    };

    for row in run.report.rows.iter().filter(|r| r.failed) {
        eprintln!(
            "warning: lambda {} failed: {}",
            row.lambda,
            row.error.as_deref().unwrap_or("unknown")
        );
    }

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let report_path = args.out.join("report.csv");
    write_report(&report_path, &run.report.rows)?;
    let chosen_lambda = run
        .report
        .chosen_lambda
        .expect("a successful grid search always chooses a lambda");
    let model_path = args.out.join("model.txt");
    ModelFile {
        params: run.chosen.params,
        lambda: chosen_lambda,
        flipped: run.chosen.flipped,
        standardize: None,
    }
    .save(&model_path)?;

    manifest.input("features", &args.features);
    manifest.input("votes", &args.votes);
    if let Some(labels) = &args.labels {
        manifest.input("labels", labels);
    }
    manifest.seed("seed", args.seed);
    manifest.param("restarts", usize_value(args.restarts));
    manifest.output("report", &report_path);
    manifest.output("model", &model_path);
    manifest.result("chosen_lambda", chosen_lambda);
    manifest.write(&args.out)?;

    Ok(format!(
        "scanned {} lambdas; chose {} (report in {})",
        run.report.rows.len(),
        chosen_lambda,
        report_path.display()
    ))
}

pub fn compare(args: &CompareArgs) -> Result<String> {
    let mut manifest = Manifest::new("compare");
    let ds = Dataset::load_csv(&args.features, &args.votes, args.labels.as_deref())?;
    let methods = args
        .method
        .iter()
        .map(|name| parse_method(name))
        .collect::<Result<Vec<Method>>>()?;

    let (train, test) = ds.split(&SplitSpec::new(args.test_fraction, args.seed))?;
    let needs_grid = methods
        .iter()
        .any(|m| matches!(m, Method::EmSparse | Method::Majority | Method::Oracle));
    let grid = if needs_grid {
        resolve_grid(args.grid.as_deref(), args.grid_size, &train)?
    } else {
        Vec::new()
    };

    let config = EmConfig {
        restarts: args.restarts,
        seed: args.seed,
        ..EmConfig::default()
    };
    let report = compare_methods(&train, &test, &methods, &grid, &config)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let compare_path = args.out.join("compare.csv");
    write_compare(&compare_path, &report.method_rows)?;
    manifest.output("compare", &compare_path);
    if !report.rows.is_empty() {
        // The grid scan behind the em-sparse row, for plotting.
        let report_path = args.out.join("report.csv");
        write_report(&report_path, &report.rows)?;
        manifest.output("report", &report_path);
    }

    manifest.input("features", &args.features);
    manifest.input("votes", &args.votes);
    if let Some(labels) = &args.labels {
        manifest.input("labels", labels);
    }
    manifest.seed("seed", args.seed);
    manifest.param(
        "method",
        toml::Value::Array(
            methods
                .iter()
                .map(|m| toml::Value::String(m.name()))
                .collect(),
        ),
    );
    if !grid.is_empty() {
        manifest.param("grid", grid_values(&grid));
    }
    manifest.param("test_fraction", args.test_fraction);
    manifest.param("restarts", usize_value(args.restarts));
    if let Some(lambda) = report.chosen_lambda {
        manifest.result("chosen_lambda", lambda);
    }
    let best = report
        .method_rows
        .iter()
        .find(|r| r.s_min)
        .expect("a nonempty comparison flags a score minimizer");
    manifest.result("lowest_score_method", best.method.clone());
    manifest.write(&args.out)?;

    Ok(format!(
        "compared {} methods; lowest vote disagreement: {} ({})",
        report.method_rows.len(),
        best.method,
        compare_path.display()
    ))
}

pub fn predict(args: &PredictArgs) -> Result<String> {
    let mut manifest = Manifest::new("predict");
    let model = ModelFile::load(&args.model)?;
    let features = load_features_csv(&args.features)?;
    let width = model.params.gamma.len();
    if features.ncols() != width {
        return Err(Error::Dim(format!(
            "{} has {} feature columns but the model expects {width}",
            args.features.display(),
            features.ncols()
        )));
    }

    let votes = match &args.votes {
        Some(path) => {
            let (votes, available) = load_votes_csv(path)?;
            if votes.nrows() != features.nrows() {
                return Err(Error::Invalid(format!(
                    "{} has {} rows but {} has {}",
                    path.display(),
                    votes.nrows(),
                    args.features.display(),
                    features.nrows()
                )));
            }
            if votes.ncols() != model.params.alpha.len() {
                return Err(Error::Dim(format!(
                    "{} has {} expert columns but the model expects {}",
                    path.display(),
                    votes.ncols(),
                    model.params.alpha.len()
                )));
            }
            Some((votes, available))
        }
        None => None,
    };

    let mut probabilities = Vec::with_capacity(features.nrows());
    let mut x = vec![0.0; width];
    for i in 0..features.nrows() {
        for (j, v) in x.iter_mut().enumerate() {
            *v = features[(i, j)];
        }
        if let Some(record) = &model.standardize {
            record.apply_row(&mut x)?;
        }
        let unit_votes: Vec<(usize, u8)> = match &votes {
            Some((votes, available)) => (0..votes.ncols())
                .filter(|&k| available[(i, k)])
                .map(|k| (k, votes[(i, k)]))
                .collect(),
            None => Vec::new(),
        };
        let p = predict_with_votes(&model.params, &x, &unit_votes)
            .map_err(|e| e.prefixed(&format!("unit {i}")))?;
        probabilities.push(p);
    }

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let probabilities_path = args.out.join("probabilities.csv");
    write_column(&probabilities_path, &probabilities)?;

    manifest.input("model", &args.model);
    manifest.input("features", &args.features);
    if let Some(path) = &args.votes {
        manifest.input("votes", path);
    }
    manifest.output("probabilities", &probabilities_path);
    manifest.result("units", usize_value(features.nrows()));
    manifest.write(&args.out)?;

    Ok(format!(
        "scored {} units into {}",
        features.nrows(),
        probabilities_path.display()
    ))
}

/// A plain logistic fit presented as a crowd model: zero reliability
/// coefficients make every vote contribution vanish, so `predict` works on
/// the same file format. The posterior column holds the fitted probability.
fn linear_as_crowd(
    ds: &Dataset,
    beta: Vec<f64>,
    converged: bool,
) -> (CrowdParams, bool, bool, Vec<f64>) {
    let probs = (0..ds.n())
        .map(|i| {
            let row = ds.feature_row(i);
            let eta = beta[0]
                + beta[1..]
                    .iter()
                    .zip(row.iter())
                    .map(|(b, v)| b * v)
                    .sum::<f64>();
            sigmoid(eta)
        })
        .collect();
    let params = CrowdParams {
        alpha: vec![0.0; ds.d()],
        gamma: vec![0.0; ds.k()],
        beta,
    };
    (params, false, converged, probs)
}

fn method_name(method: FitMethod) -> &'static str {
    match method {
        FitMethod::Em => "em",
        FitMethod::Majority => "majority",
        FitMethod::Oracle => "oracle",
    }
}

fn parse_method(name: &str) -> Result<Method> {
    match name.trim() {
        "em" => Ok(Method::Em),
        "em-sparse" => Ok(Method::EmSparse),
        "majority" => Ok(Method::Majority),
        "oracle" => Ok(Method::Oracle),
        other => {
            if let Some(c) = other.strip_prefix("constant-") {
                let value: u8 = c.parse().map_err(|_| bad_method(other))?;
                if value > 1 {
                    return Err(bad_method(other));
                }
                return Ok(Method::Constant(value));
            }
            Err(bad_method(other))
        }
    }
}

fn bad_method(name: &str) -> Error {
    Error::Invalid(format!(
        "unknown method '{name}'; expected em, em-sparse, majority, oracle, \
         constant-0 or constant-1"
    ))
}

fn resolve_grid(explicit: Option<&[f64]>, size: usize, ds: &Dataset) -> Result<Vec<f64>> {
    match explicit {
        Some(grid) => Ok(grid.to_vec()),
        None => default_grid(ds, size),
    }
}

fn grid_values(grid: &[f64]) -> toml::Value {
    toml::Value::Array(grid.iter().map(|&v| toml::Value::Float(v)).collect())
}

/// TOML config errors carry a byte span; report it as a line number to match
/// the CSV loaders' `path:line` convention.
fn config_error(path: &Path, text: &str, err: &toml::de::Error) -> Error {
    let line = err
        .span()
        .map(|s| text.get(..s.start).unwrap_or("").matches('\n').count() + 1)
        .unwrap_or(1);
    Error::parse(path, line, err.message())
}

fn write_report(path: &Path, rows: &[LambdaRow]) -> Result<()> {
    let mut out = String::from("lambda,s_hat,r_hat,nnz_gamma,nnz_beta,converged\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.lambda,
            opt(row.s_hat),
            opt(row.r_hat),
            row.nnz_gamma,
            row.nnz_beta,
            row.converged
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_compare(path: &Path, rows: &[MethodRow]) -> Result<()> {
    let mut out = String::from("method,lambda,s_hat,r_hat,s_min,r_min\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.method,
            opt(row.lambda),
            row.s_hat,
            opt(row.r_hat),
            row.s_min,
            row.r_min
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_column(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::new();
    for v in values {
        let _ = writeln!(out, "{v}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}
