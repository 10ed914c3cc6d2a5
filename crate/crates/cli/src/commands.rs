use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crowdserve::dispatch::{open_session, RecommenderInput, SessionConfig};
use crowdserve::model::ResponseVerdict;
use crowdserve::recommender::{self, train, CarsModel, Hyperparams, RatingRecord, Taxonomy};
use crowdserve::store::bench::{run_bench, BenchConfig};
use crowdserve::store::workload::{generate_workload, WorkloadItem, WorkloadSpec};
use crowdserve::store::{read_log, read_log_prefix, EventLog, Snapshot, TurkDb};
use crowdserve::{top_k, GeoPoint, IndexConfig, ScoringParams, ServiceQuery};

use crate::{Command, QueryArgs, Source};

pub fn run(command: Command, seed: Option<u64>) -> Result<()> {
    match command {
        Command::Load { log, lenient } => load(&log, lenient),
        Command::Snapshot {
            file,
            source,
            model,
        } => snapshot(&file, &source, model.as_deref()),
        Command::Query {
            source,
            query,
            stats,
        } => run_query(&source, &query, stats),
        Command::Simulate {
            spec,
            out,
            queries_out,
        } => simulate(&spec, &out, queries_out.as_deref(), seed),
        Command::Bench { spec, out } => bench(&spec, out.as_deref(), seed),
        Command::TrainCars {
            ratings,
            out,
            factors,
            epochs,
            learning_rate,
            regularization,
        } => {
            let mut h = Hyperparams::default();
            h.factors = factors.unwrap_or(h.factors);
            h.epochs = epochs.unwrap_or(h.epochs);
            h.learning_rate = learning_rate.unwrap_or(h.learning_rate);
            h.regularization = regularization.unwrap_or(h.regularization);
            train_cars(&ratings, &out, &h, seed.unwrap_or(0))
        }
        Command::Recommend {
            model,
            user,
            query,
            pool,
            exclude,
            m,
        } => recommend(&model, &user, &query, pool, exclude, m),
        Command::Dispatch {
            script,
            source,
            query,
            km,
            kr,
            timeout,
            model,
            user,
            session_id,
        } => {
            let mut config = SessionConfig::new(session_id, km, kr);
            config.timeout_s = timeout;
            dispatch(&script, &source, &query, config, model.as_deref(), &user)
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("cannot parse {}", path.display()))
}

fn read_json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("cannot read {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(v);
    }
    Ok(out)
}

fn print_line<T: Serialize>(out: &mut impl Write, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, v)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn load_db(source: &Source) -> Result<TurkDb> {
    let cfg = IndexConfig::default();
    match (&source.snapshot, &source.log) {
        (None, None) => bail!("need --log or --snapshot"),
        (None, Some(log)) => TurkDb::replay(cfg, &read_log(log)?)
            .with_context(|| format!("replaying {}", log.display())),
        (Some(snap), log) => {
            let snapshot = Snapshot::load(snap)?;
            match log {
                Some(log) => Ok(TurkDb::from_snapshot_and_log(&snapshot, &read_log(log)?)?),
                None => Ok(snapshot.restore()?),
            }
        }
    }
}

fn build_query(db: Option<&TurkDb>, a: &QueryArgs) -> Result<(ServiceQuery, ScoringParams)> {
    let at = a.at.unwrap_or_else(|| {
        db.and_then(|db| db.index().objects().map(|o| o.positioned_at).max())
            .unwrap_or(0)
    });
    let q = ServiceQuery::new(&a.kw, GeoPoint::new(a.lat, a.lon)?, at, a.k)?
        .with_weights(a.alpha, a.lambda, a.dmax)?;
    let p = ScoringParams::for_query(&q).with_recency_unit(a.recency_unit);
    p.validate()?;
    Ok((q, p))
}

fn load(log: &Path, lenient: bool) -> Result<()> {
    let (events, torn) = if lenient {
        let r = read_log_prefix(log)?;
        (r.events, r.corruption.map(|e| e.to_string()))
    } else {
        (read_log(log)?, None)
    };
    let db = TurkDb::replay(IndexConfig::default(), &events)?;
    let mut summary = json!({
        "events": db.applied(),
        "objects": db.index().len(),
        "ratings": db.ratings().len(),
        "responses": db.responses().len(),
        "nodes": db.index().node_count(),
    });
    if let Some(t) = torn {
        summary["ignored_tail"] = json!(t);
    }
    println!("{summary}");
    Ok(())
}

fn snapshot(file: &Path, source: &Source, model: Option<&Path>) -> Result<()> {
    let db = load_db(source)?;
    let model = match model {
        Some(p) => Some(CarsModel::from_dump(&fs::read_to_string(p)?)?),
        None => None,
    };
    let at = db
        .index()
        .objects()
        .map(|o| o.positioned_at)
        .max()
        .unwrap_or(0);
    Snapshot::capture(&db, at, model.as_ref()).save(file)?;
    println!(
        "{}",
        json!({"objects": db.index().len(), "events": db.applied(), "file": file.display().to_string()})
    );
    Ok(())
}

fn run_query(source: &Source, args: &QueryArgs, stats: bool) -> Result<()> {
    let db = load_db(source)?;
    let (q, p) = build_query(Some(&db), args)?;
    let r = top_k(db.index(), &q, &p)?;
    let mut out = BufWriter::new(io::stdout().lock());
    for c in &r.candidates {
        print_line(&mut out, c)?;
    }
    out.flush()?;
    if stats {
        eprintln!("{}", serde_json::to_string(&r.stats)?);
    }
    Ok(())
}

fn simulate(spec: &Path, out: &Path, queries_out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut spec: WorkloadSpec = read_json(spec)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let items = generate_workload(&spec)?;
    let mut events = Vec::new();
    let mut queries = Vec::new();
    for it in items {
        match it {
            WorkloadItem::Event(e) => events.push(e),
            WorkloadItem::Query(q) => queries.push(q),
        }
    }
    let mut log = EventLog::open(out)?;
    if !log.is_empty() {
        bail!("{} already holds events", out.display());
    }
    log.append_all(&events)?;
    if let Some(path) = queries_out {
        let mut w = BufWriter::new(
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
        );
        for q in &queries {
            print_line(&mut w, q)?;
        }
        w.flush()?;
    }
    println!(
        "{}",
        json!({"events": events.len(), "queries": queries.len(), "log": out.display().to_string()})
    );
    Ok(())
}

fn bench(spec: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut config: BenchConfig = read_json(spec)?;
    if let Some(s) = seed {
        config.workload.seed = s;
    }
    let run = run_bench(&config)?;
    let report = serde_json::to_string_pretty(&run.report)?;
    match out {
        Some(path) => fs::write(path, report + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => println!("{report}"),
    }
    eprintln!(
        "{} objects, {} updates, {} queries, agreement {}",
        run.objects, run.updates, run.queries, run.report.oracle_agreement
    );
    if run.report.oracle_agreement < 1.0 {
        bail!(
            "{} queries disagreed with the oracle",
            run.disagreements.len()
        );
    }
    Ok(())
}

fn train_cars(ratings: &Path, out: &Path, hyper: &Hyperparams, seed: u64) -> Result<()> {
    let records: Vec<RatingRecord> = read_json_lines(ratings)?;
    let model = train(&records, hyper, seed)?;
    fs::write(out, model.to_dump()).with_context(|| format!("cannot write {}", out.display()))?;
    println!(
        "{}",
        json!({
            "ratings": records.len(),
            "turks": model.known_turks().len(),
            "parameters": model.parameter_count(),
            "final_loss": model.loss_history().last(),
        })
    );
    Ok(())
}

fn read_model(path: &Path) -> Result<CarsModel> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(CarsModel::from_dump(&text)?)
}

fn recommend(
    model: &Path,
    user: &str,
    args: &QueryArgs,
    pool: Vec<String>,
    exclude: Vec<String>,
    m: usize,
) -> Result<()> {
    if m == 0 {
        bail!("--m must be at least 1");
    }
    let model = read_model(model)?;
    let (q, _) = build_query(None, args)?;
    let pool = if pool.is_empty() {
        model.known_turks().to_vec()
    } else {
        pool
    };
    let exclude: BTreeSet<String> = exclude.into_iter().collect();
    let mut out = BufWriter::new(io::stdout().lock());
    for (turk, rating) in
        recommender::recommend(&model, user, &q, &Taxonomy::default(), &pool, &exclude, m)
    {
        print_line(
            &mut out,
            &json!({"turk_id": turk, "predicted_rating": rating}),
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptStep {
    at: i64,
    turk_id: Option<String>,
    verdict: Option<ResponseVerdict>,
}

fn dispatch(
    script: &Path,
    source: &Source,
    args: &QueryArgs,
    config: SessionConfig,
    model: Option<&Path>,
    user: &str,
) -> Result<()> {
    let steps: Vec<ScriptStep> = read_json_lines(script)?;
    let db = load_db(source)?;
    let (q, p) = build_query(Some(&db), args)?;
    let model = model.map(read_model).transpose()?;
    let taxonomy = Taxonomy::default();
    let pool: Vec<String> = model
        .as_ref()
        .map(|m| m.known_turks().to_vec())
        .unwrap_or_default();
    let input = model.as_ref().map(|m| RecommenderInput {
        model: m,
        user_id: user,
        taxonomy: &taxonomy,
        pool: &pool,
    });
    let mut session = open_session(db.index(), &q, &p, config, input)?;
    for (i, step) in steps.iter().enumerate() {
        let line = i + 1;
        match (&step.turk_id, step.verdict) {
            (Some(t), Some(v)) => session
                .respond(t, v, step.at)
                .with_context(|| format!("script line {line}"))?,
            (None, None) => {
                session.tick(step.at)?;
            }
            _ => bail!("script line {line}: turk_id and verdict go together"),
        }
    }
    let mut out = BufWriter::new(io::stdout().lock());
    for row in session.log() {
        print_line(&mut out, row)?;
    }
    out.flush()?;
    Ok(())
}
