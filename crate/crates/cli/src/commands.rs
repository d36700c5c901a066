use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spe_core::asymptotics::z_scores;
use spe_core::compositional::{
    log_ratio_transform, replace_below_threshold, response_transform, subcomposition_normalize, synthetic_geochem,
    CompositionTable, MAJOR_ELEMENTS,
};
use spe_core::envelope::{fit_spe_kind, select_dimension_kind, Selection};
use spe_core::prediction::{cross_validate, krige_predict, CvModel, CvReport, PredictionRequest};
use spe_core::simulation::{histogram, run_scenario, ReplicateRecord, SimConfig, SimResult};
use spe_core::{CorrelationKind, Criterion, Fit, Matrix, OptimOptions};

use crate::args::{CvArgs, DataArgs, FitArgs, FixtureArgs, PredictArgs, SelectArgs, SimulateArgs, TransformArgs};
use crate::error::{usage, CliResult};
use crate::io::{fmt_num, fmt_opt, load_dataset, name_list, resolve_roles, write_csv, write_json, RawTable, Roles};

pub const COEF_HEADER: [&str; 5] = ["predictor", "response", "estimate", "se", "z"];
pub const SELECT_HEADER: [&str; 10] = ["u", "loglik", "aic", "bic", "param_count", "tau", "lambda", "cv_mspe", "selected", "error"];
pub const PREDICT_HEADER: [&str; 5] = ["row", "sx", "sy", "response", "prediction"];
pub const CV_HEADER: [&str; 5] = ["model", "rep", "fold", "mspe", "u"];
pub const SUMMARY_HEADER: [&str; 5] = ["method", "metric", "mean", "se", "count"];
pub const REPLICATE_HEADER: [&str; 12] = [
    "rep", "spe_angle", "pe_angle", "spe_error", "pe_error", "gls_error", "spe_u", "pe_u", "spe_beta1", "tau_hat", "lambda_hat", "error",
];
pub const HISTOGRAM_HEADER: [&str; 5] = ["series", "bin", "lower", "upper", "count"];
pub const OVERLAY_HEADER: [&str; 2] = ["mean", "sd"];

/// Echo of the inputs that produced an artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub data: String,
    pub roles: Roles,
    pub kind: CorrelationKind,
    pub options: OptimOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefRow {
    pub predictor: String,
    pub response: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
}

/// What `spe fit --out-json` writes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitArtifact {
    pub config: RunConfig,
    pub fit: Fit,
    pub coefficients: Vec<CoefRow>,
}

fn load(args: &DataArgs) -> CliResult<(RawTable, Roles)> {
    let table = RawTable::read(&args.data)?;
    let roles = resolve_roles(&table, &args.coords, &args.response, args.predictors.as_deref())?;
    Ok((table, roles))
}

fn run_config(command: &str, data: &Path, roles: &Roles, kind: CorrelationKind, options: &OptimOptions) -> RunConfig {
    RunConfig { command: command.into(), data: data.display().to_string(), roles: roles.clone(), kind, options: options.clone() }
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let (table, roles) = load(&args.data)?;
    let data = load_dataset(&table, &roles)?;
    if args.u > data.p() {
        return Err(usage(format!("--u {} exceeds the {} predictors", args.u, data.p())));
    }
    let (opts, kind) = (args.optim.options()?, args.optim.kind());
    let fit = fit_spe_kind(&data, args.u, kind, &opts)?;
    let table = z_scores(&fit, data.n())?;
    let mut coefficients = Vec::new();
    for (j, resp) in roles.response.iter().enumerate() {
        for (i, pred) in roles.predictors.iter().enumerate() {
            coefficients.push(CoefRow {
                predictor: pred.clone(),
                response: resp.clone(),
                estimate: table.beta[(i, j)],
                se: table.se[(i, j)],
                z: table.z[(i, j)],
            });
        }
    }
    let rows: Vec<Vec<String>> = coefficients
        .iter()
        .map(|c| vec![c.predictor.clone(), c.response.clone(), fmt_num(c.estimate), fmt_num(c.se), fmt_num(c.z)])
        .collect();
    let artifact = FitArtifact { config: run_config("fit", &args.data.data, &roles, kind, &opts), fit, coefficients };
    if let Some(path) = &args.out_json {
        write_json(Some(path), &artifact)?;
    }
    if args.out_coef.is_some() || args.out_json.is_none() {
        write_csv(args.out_coef.as_deref(), &COEF_HEADER, &rows)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SelectArtifact<'a> {
    config: RunConfig,
    selection: &'a Selection<f64>,
}

pub fn select(args: &SelectArgs) -> CliResult<()> {
    let (table, roles) = load(&args.data)?;
    let data = load_dataset(&table, &roles)?;
    let (opts, kind) = (args.optim.options()?, args.optim.kind());
    let criterion = args.criterion.criterion(args.cv_k, args.cv_reps, args.optim.seed);
    if let Criterion::Cv { k, .. } = criterion {
        check_folds(k, data.n())?;
    }
    let sel = select_dimension_kind(&data, criterion, kind, &opts)?;
    let rows: Vec<Vec<String>> = sel
        .rows
        .iter()
        .map(|row| {
            let f = row.fit.as_ref();
            vec![
                row.u.to_string(),
                fmt_opt(f.map(|f| f.loglik)),
                fmt_opt(f.map(|f| f.aic)),
                fmt_opt(f.map(|f| f.bic)),
                f.map(|f| f.param_count.to_string()).unwrap_or_default(),
                fmt_opt(f.map(|f| f.theta.tau)),
                fmt_opt(f.map(|f| f.theta.lambda)),
                fmt_opt(row.cv_mspe),
                u8::from(row.u == sel.u_hat).to_string(),
                row.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(args.out.as_deref(), &SELECT_HEADER, &rows)?;
    if let Some(path) = &args.out_json {
        let artifact = SelectArtifact { config: run_config("select", &args.data.data, &roles, kind, &opts), selection: &sel };
        write_json(Some(path), &artifact)?;
    }
    Ok(())
}

pub fn predict(args: &PredictArgs) -> CliResult<()> {
    let artifact: FitArtifact = crate::io::read_json(&args.fit)?;
    let roles = artifact.config.roles;
    let train = load_dataset(&RawTable::read(&args.data)?, &roles)?;
    if train.n() != artifact.fit.n || train.p() != artifact.fit.p() {
        return Err(usage(format!(
            "fit was made on n = {}, p = {} but {} has n = {}, p = {}",
            artifact.fit.n,
            artifact.fit.p(),
            args.data.display(),
            train.n(),
            train.p()
        )));
    }
    let test = RawTable::read(&args.test)?;
    let sites = test.sites(&roles.coords)?;
    let x = test.matrix(&roles.predictors)?;
    let req = PredictionRequest::new(train, sites.clone(), x)?;
    let pred: Matrix = krige_predict(&artifact.fit, &req)?;
    let mut rows = Vec::new();
    for i in 0..pred.nrows() {
        let s = sites.get(i);
        for (j, resp) in roles.response.iter().enumerate() {
            rows.push(vec![i.to_string(), fmt_num(s[0]), fmt_num(s[1]), resp.clone(), fmt_num(pred[(i, j)])]);
        }
    }
    write_csv(args.out.as_deref(), &PREDICT_HEADER, &rows)
}

fn check_folds(k: usize, n: usize) -> CliResult<()> {
    if k < 2 || k > n {
        return Err(usage(format!("need 2 <= k <= n, got k = {k}, n = {n}")));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct CvArtifact<'a> {
    config: RunConfig,
    models: Vec<String>,
    /// Dimension chosen by BIC on the full data when no model was requested.
    default_u: Option<usize>,
    report: &'a CvReport<f64>,
}

pub fn cv(args: &CvArgs) -> CliResult<()> {
    let (table, roles) = load(&args.data)?;
    let data = load_dataset(&table, &roles)?;
    check_folds(args.k, data.n())?;
    if args.reps == 0 {
        return Err(usage("--reps must be positive"));
    }
    let (opts, kind) = (args.optim.options()?, args.optim.kind());
    let mut models: Vec<CvModel> = args.cv_fix_u.iter().map(|&u| CvModel::SpeFixed(u)).collect();
    for &c in &args.cv_select_u {
        models.push(CvModel::SpeSelect(c.criterion(args.k, 1, args.optim.seed)));
    }
    if let Some(u) = args.cv_fix_u.iter().find(|&&u| u > data.p()) {
        return Err(usage(format!("--cv-fix-u {u} exceeds the {} predictors", data.p())));
    }
    let mut default_u = None;
    if models.is_empty() {
        // Fixed-u mode at the dimension BIC picks on the whole data.
        let u = select_dimension_kind(&data, Criterion::Bic, kind, &opts)?.u_hat;
        default_u = Some(u);
        models.push(CvModel::SpeFixed(u));
    }
    if !args.no_gls {
        models.push(CvModel::Gls);
    }
    let report = cross_validate(&data, args.k, args.reps, args.optim.seed, &models, kind, &opts)?;
    let rows: Vec<Vec<String>> = report
        .records
        .iter()
        .map(|r| vec![r.model.clone(), r.rep.to_string(), r.fold.to_string(), fmt_num(r.mspe), r.u.map(|u| u.to_string()).unwrap_or_default()])
        .collect();
    write_csv(args.out.as_deref(), &CV_HEADER, &rows)?;
    if let Some(path) = &args.out_json {
        let artifact = CvArtifact {
            config: run_config("cv", &args.data.data, &roles, kind, &opts),
            models: models.iter().map(CvModel::label).collect(),
            default_u,
            report: &report,
        };
        write_json(Some(path), &artifact)?;
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut cfg = SimConfig::preset(args.scenario, args.n, args.reps, args.seed)?;
    if args.no_pe {
        cfg.include_pe = false;
    }
    let res = run_scenario::<f64>(&cfg)?;
    write_simulation(&res, args.bins, &args.out_dir)
}

fn write_simulation(res: &SimResult, bins: usize, dir: &Path) -> CliResult<()> {
    let file = |name: &str| -> PathBuf { dir.join(name) };
    let summary: Vec<Vec<String>> = res
        .summary
        .iter()
        .map(|s| vec![s.method.clone(), s.metric.clone(), fmt_num(s.mean), fmt_num(s.se), s.count.to_string()])
        .collect();
    write_csv(Some(&file("summary.csv")), &SUMMARY_HEADER, &summary)?;

    let ustr = |u: Option<usize>| u.map(|u| u.to_string()).unwrap_or_default();
    let reps: Vec<Vec<String>> = res
        .records
        .iter()
        .map(|r| {
            vec![
                r.rep.to_string(),
                fmt_opt(r.spe_angle),
                fmt_opt(r.pe_angle),
                fmt_opt(r.spe_error),
                fmt_opt(r.pe_error),
                fmt_opt(r.gls_error),
                ustr(r.spe_u),
                ustr(r.pe_u),
                fmt_opt(r.spe_beta1),
                fmt_opt(r.tau_hat),
                fmt_opt(r.lambda_hat),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(Some(&file("replicates.csv")), &REPLICATE_HEADER, &reps)?;

    let mut hist = Vec::new();
    let h = histogram(&res.beta1_values(), bins);
    for (b, &c) in h.counts.iter().enumerate() {
        hist.push(vec!["spe_beta1".into(), b.to_string(), fmt_num(h.edges[b]), fmt_num(h.edges[b + 1]), c.to_string()]);
    }
    let p = res.config.p;
    type Getter = fn(&ReplicateRecord) -> Option<usize>;
    let series_list: [(&str, Getter); 2] = [("spe_u", |r| r.spe_u), ("pe_u", |r| r.pe_u)];
    for (series, get) in series_list {
        let mut counts = vec![0usize; p + 1];
        let mut any = false;
        for u in res.records.iter().filter_map(get) {
            counts[u] += 1;
            any = true;
        }
        if any && res.u_counts.is_some() {
            for (u, c) in counts.into_iter().enumerate() {
                hist.push(vec![series.into(), u.to_string(), fmt_num(u as f64), fmt_num(u as f64), c.to_string()]);
            }
        }
    }
    write_csv(Some(&file("histogram.csv")), &HISTOGRAM_HEADER, &hist)?;

    let overlay: Vec<Vec<String>> = res.overlay.iter().map(|o| vec![fmt_num(o.mean), fmt_num(o.sd)]).collect();
    write_csv(Some(&file("overlay.csv")), &OVERLAY_HEADER, &overlay)?;
    write_json(Some(&file("result.json")), res)
}

#[derive(Debug, Serialize)]
struct TransformReport {
    rows: usize,
    replacements: usize,
    subcomposition: Vec<String>,
    denominator: String,
    response: String,
    predictors: Vec<String>,
}

fn parse_threshold(s: &str) -> CliResult<(String, f64)> {
    let (name, value) = s.split_once('=').ok_or_else(|| usage(format!("--threshold expects NAME=VALUE, got {s:?}")))?;
    let v: f64 = value.trim().parse().map_err(|_| usage(format!("threshold {s:?} is not a number")))?;
    Ok((name.trim().to_owned(), v))
}

pub fn transform(args: &TransformArgs) -> CliResult<()> {
    let raw = RawTable::read(&args.data)?;
    let coords = crate::io::coord_pair(&args.coords)?;
    let components = match &args.components {
        Some(c) => name_list(c)?,
        None => raw.headers.iter().filter(|h| !coords.contains(h) && **h != args.response).cloned().collect(),
    };
    if components.iter().any(|c| coords.contains(c) || *c == args.response) {
        return Err(usage("components must not include the coordinates or the response"));
    }
    let sub = match &args.subcomposition {
        Some(s) => name_list(s)?,
        None => components.clone(),
    };
    if let Some(c) = sub.iter().find(|c| !components.contains(c)) {
        return Err(usage(format!("subcomposition column {c} is not a component")));
    }
    if !sub.contains(&args.denominator) {
        return Err(usage(format!("denominator {} is not in the subcomposition", args.denominator)));
    }
    let mut thresholds = vec![None; components.len()];
    for t in &args.thresholds {
        let (name, v) = parse_threshold(t)?;
        let j = components.iter().position(|c| *c == name).ok_or_else(|| usage(format!("threshold for unknown component {name}")))?;
        thresholds[j] = Some(v);
    }
    let values = raw.matrix(&components)?;
    let table = CompositionTable::new(components.clone(), values, thresholds)?;
    let (table, replacements) = replace_below_threshold(&table)?;
    let sub_refs: Vec<&str> = sub.iter().map(String::as_str).collect();
    let closed = subcomposition_normalize(&table, &sub_refs)?.select(&sub_refs)?;
    let (x, names) = log_ratio_transform(&closed, &args.denominator)?;
    let y = response_transform(&raw.numeric(&args.response)?)?;
    let sx = raw.numeric(&coords[0])?;
    let sy = raw.numeric(&coords[1])?;

    let mut header: Vec<&str> = vec![&coords[0], &coords[1], &args.response];
    header.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = (0..raw.rows.len())
        .map(|i| {
            let mut row = vec![fmt_num(sx[i]), fmt_num(sy[i]), fmt_num(y[i])];
            row.extend((0..x.ncols()).map(|j| fmt_num(x[(i, j)])));
            row
        })
        .collect();
    write_csv(args.out.as_deref(), &header, &rows)?;
    if let Some(path) = &args.report {
        let report = TransformReport {
            rows: rows.len(),
            replacements,
            subcomposition: sub,
            denominator: args.denominator.clone(),
            response: args.response.clone(),
            predictors: names,
        };
        write_json(Some(path), &report)?;
    }
    Ok(())
}

pub fn fixture(args: &FixtureArgs) -> CliResult<()> {
    if args.locations == 0 || args.n == 0 {
        return Err(usage("--n and --locations must be positive"));
    }
    let samples = synthetic_geochem(args.n, args.locations, args.seed);
    let mut header = vec!["sx", "sy"];
    header.extend(MAJOR_ELEMENTS);
    header.push("REE");
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|s| {
            let mut row = vec![fmt_num(s.sx), fmt_num(s.sy)];
            row.extend(s.majors.iter().map(|&v| fmt_num(v)));
            row.push(fmt_num(s.ree_ppm));
            row
        })
        .collect();
    write_csv(args.out.as_deref(), &header, &rows)
}
