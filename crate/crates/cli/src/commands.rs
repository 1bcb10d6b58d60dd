use std::fs;
use std::path::Path;
use std::time::Instant;

use dgd::data::{
    load_checkpoint, save_checkpoint, split_indices, Dataset, ModelBundle, SplitName, SplitSpec,
};
use dgd::metrics::{evaluate, write_reports, EvalOptions, Report};
use dgd::model::{DgdModel, Profile};
use dgd::training::{
    hard_cluster, infer_representations, InferConfig, PriorWeighting, TrainConfig, Trainer,
};
use dgd::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{EvalArgs, ExportArgs, InferArgs, SampleArgs, TrainArgs};
use crate::run::{
    io_err, read_json, write_json, InputSpec, RunConfig, RunDir, CHECKPOINT_DIR, CONFIG_FILE,
    HISTORY_FILE, REPORT_FILE, SPLITS_FILE,
};

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn finish_csv(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| io_err(path, e))
}

fn z_headers(m: usize) -> impl Iterator<Item = String> {
    (1..=m).map(|d| format!("z_{d}"))
}

fn build_config(a: &TrainArgs, data: &Dataset, input: InputSpec) -> Result<RunConfig> {
    let (k, k_auto) = match a.k.as_deref() {
        Some("auto") => {
            let labels = data
                .labels()
                .ok_or_else(|| Error::Contract("--k auto needs --labels".into()))?;
            (labels.n_classes(), true)
        }
        Some(v) => (
            v.parse::<usize>().map_err(|_| {
                Error::Contract(format!("--k must be a count or 'auto', got '{v}'"))
            })?,
            false,
        ),
        None => return Err(Error::Contract("--k is required".into())),
    };
    let mut t = TrainConfig::for_profile(input.profile, a.latent_dim, k);
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = &a.hidden {
        t.hidden = v.clone();
    }
    if let Some(v) = a.lr_decoder {
        t.lr.decoder = v;
    }
    if let Some(v) = a.lr_representation {
        t.lr.representation = v;
    }
    if let Some(v) = a.lr_gmm {
        t.lr.gmm = v;
    }
    if let Some(v) = a.weight_decay {
        t.weight_decay = v;
    }
    if let Some(v) = a.dirichlet_alpha {
        t.gmm.dirichlet_alpha = v;
    }
    if a.sigma.is_some() {
        t.gmm.sigma = a.sigma;
    }
    if let Some(v) = &a.prior_weighting {
        t.prior_weighting = v.parse::<PriorWeighting>()?;
    }
    t.supervised = a.supervised;
    t.seed = a.seed;
    t.record_wall_time = a.timing;
    t.validate()?;
    let [train, val, test] = a.split[..] else {
        return Err(Error::Contract("--split needs three fractions".into()));
    };
    Ok(RunConfig {
        input,
        train: t,
        split: SplitSpec::new(train, val, test)?,
        rmse_space: a.rmse_space.parse()?,
        k_auto,
    })
}

fn report_options(run: &RunConfig, split: SplitName, seconds: Option<f64>) -> EvalOptions {
    EvalOptions {
        model_name: "dgd".into(),
        split_name: split.to_string(),
        rmse_space: run.rmse_space,
        seconds,
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let (run, data) = match &a.config {
        Some(path) => {
            let run: RunConfig = read_json(path)?;
            let data = run.input.load()?;
            (run, data)
        }
        None => {
            let input = InputSpec::from_args(&a.input)?;
            let data = input.load()?;
            (build_config(&a, &data, input)?, data)
        }
    };
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    write_json(&a.out.join(CONFIG_FILE), &run)?;

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(run.train.seed);
    let splits = split_indices(data.n_samples(), &run.split, &mut rng)?;
    if splits.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    write_json(&a.out.join(SPLITS_FILE), &splits)?;
    let train_data = data.subset(&splits.train);

    let mut trainer = Trainer::new(&train_data, run.train.clone(), rng)?;
    let outcome = trainer.run();
    // Keep the partial history for diagnosis when training blows up.
    trainer.history().write_csv(&a.out.join(HISTORY_FILE))?;
    outcome?;
    let out = trainer.finish();

    let bundle = ModelBundle {
        model: out.model,
        representations: Some(out.representations.z.clone()),
        feature_mask: match &data {
            Dataset::Counts(c) => Some(c.feature_mask().to_vec()),
            Dataset::Binary(_) => None,
        },
        label_names: data.labels().map(|l| l.names().to_vec()),
        config: serde_json::to_value(&run)?,
    };
    save_checkpoint(&bundle, &a.out.join(CHECKPOINT_DIR))?;

    let seconds = run
        .train
        .record_wall_time
        .then(|| started.elapsed().as_secs_f64());
    let report = evaluate(
        &bundle.model,
        &train_data,
        out.representations.values(),
        &report_options(&run, SplitName::Train, seconds),
    )?;
    write_reports(&a.out.join(REPORT_FILE), std::slice::from_ref(&report))?;
    println!("{report}");
    Ok(())
}

/// Representations for `rows` of `data`: stored ones for training samples,
/// inferred ones for the rest.
fn representations_for(
    dir: &RunDir,
    bundle: &ModelBundle,
    data: &Dataset,
    rows: &[usize],
    seed: u64,
) -> Result<Vec<f64>> {
    let m = bundle.model.latent_dim();
    let stored = bundle
        .representations
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no representations".into()))?;
    let mut train_pos = vec![usize::MAX; data.n_samples()];
    for (p, &r) in dir.splits.train.iter().enumerate() {
        train_pos[r] = p;
    }
    let new_rows: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&r| train_pos[r] == usize::MAX)
        .collect();
    let inferred = if new_rows.is_empty() {
        Vec::new()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fit = infer_representations(
            &bundle.model,
            &data.subset(&new_rows),
            &InferConfig::default(),
            &mut rng,
        )?;
        fit.z.values().to_vec()
    };
    let mut z = Vec::with_capacity(rows.len() * m);
    let mut next = 0;
    for &r in rows {
        match train_pos[r] {
            usize::MAX => {
                z.extend_from_slice(&inferred[next * m..(next + 1) * m]);
                next += 1;
            }
            p => z.extend_from_slice(stored.row(p)),
        }
    }
    Ok(z)
}

fn load_run(dir: &Path) -> Result<(RunDir, ModelBundle, Dataset)> {
    let run = RunDir::open(dir)?;
    let bundle = load_checkpoint(&run.checkpoint(), Some(run.config.input.profile))?;
    let data = match (run.config.input.load()?, &bundle.feature_mask) {
        (Dataset::Counts(c), Some(mask)) => Dataset::Counts(c.with_feature_mask(mask)?),
        (d, _) => d,
    };
    Ok((run, bundle, data))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let split: SplitName = a.split.parse()?;
    let (run, bundle, data) = load_run(&a.run)?;
    let rows = run.splits.get(split);
    if rows.is_empty() {
        return Err(Error::Data(format!("{split} split is empty")));
    }
    let z = representations_for(
        &run,
        &bundle,
        &data,
        &rows,
        a.seed.unwrap_or(run.config.train.seed),
    )?;
    let report: Report = evaluate(
        &bundle.model,
        &data.subset(&rows),
        &z,
        &report_options(&run.config, split, None),
    )?;
    let out = a
        .out
        .unwrap_or_else(|| a.run.join(format!("report-{split}.csv")));
    write_reports(&out, std::slice::from_ref(&report))?;
    println!("{report}");
    Ok(())
}

pub fn export_latent(a: ExportArgs) -> Result<()> {
    let run = RunDir::open(&a.run)?;
    let bundle = load_checkpoint(&run.checkpoint(), Some(run.config.input.profile))?;
    let gmm = &bundle.model.gmm;
    let (m, k) = (gmm.dim(), gmm.n_components());
    let z = bundle
        .representations
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no representations".into()))?;
    let assigned = hard_cluster(gmm, z.values())?;

    let mut w = csv_writer(&a.out)?;
    let mut header = vec!["kind".to_string(), "id".to_string()];
    header.extend(z_headers(m));
    header.push("component".into());
    w.write_record(&header)?;
    for (p, (&sample, &c)) in run.splits.train.iter().zip(&assigned).enumerate() {
        let mut rec = vec!["sample".to_string(), sample.to_string()];
        rec.extend(z.row(p).iter().map(f64::to_string));
        rec.push(c.to_string());
        w.write_record(&rec)?;
    }
    let means = gmm.means.values();
    for c in 0..k {
        let mut rec = vec!["mean".to_string(), c.to_string()];
        rec.extend(means[c * m..(c + 1) * m].iter().map(f64::to_string));
        rec.push(c.to_string());
        w.write_record(&rec)?;
    }
    finish_csv(w, &a.out)
}

fn checkpoint_model(dir: &Path, expected: Option<Profile>) -> Result<ModelBundle> {
    load_checkpoint(dir, expected)
}

pub fn infer(a: InferArgs) -> Result<()> {
    let input = InputSpec::from_args(&a.input)?;
    let bundle = checkpoint_model(&a.checkpoint, Some(input.profile))?;
    let data = match (input.load()?, &bundle.feature_mask) {
        (Dataset::Counts(c), Some(mask)) => Dataset::Counts(c.with_feature_mask(mask)?),
        (d, _) => d,
    };
    let config = InferConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        init: a.init.parse()?,
        n_starts: a.n_starts,
        lr: a.lr,
        ..InferConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let fit = infer_representations(&bundle.model, &data, &config, &mut rng)?;
    write_inferred(&a.out, &bundle.model, fit.z.values())
}

fn write_inferred(path: &Path, model: &DgdModel, z: &[f64]) -> Result<()> {
    let (m, k) = (model.latent_dim(), model.n_components());
    let post = model.gmm.component_posteriors(z)?;
    let hard = hard_cluster(&model.gmm, z)?;
    let mut w = csv_writer(path)?;
    let mut header = vec!["sample_id".to_string()];
    header.extend(z_headers(m));
    header.extend(["hard_cluster".to_string(), "max_posterior".to_string()]);
    w.write_record(&header)?;
    for (i, (zi, pi)) in z.chunks(m).zip(post.chunks(k)).enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(zi.iter().map(f64::to_string));
        rec.push(hard[i].to_string());
        rec.push(pi[hard[i]].to_string());
        w.write_record(&rec)?;
    }
    finish_csv(w, path)
}

pub fn sample(a: SampleArgs) -> Result<()> {
    let bundle = checkpoint_model(&a.checkpoint, None)?;
    let model = &bundle.model;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let z = model.gmm.sample(a.n, &mut rng, a.component)?;
    let mut out = model.decoder.decode(&z)?;
    if let Some(s) = a.scale {
        if model.profile != Profile::Counts {
            return Err(Error::Contract(
                "--scale applies to the counts profile only".into(),
            ));
        }
        out.iter_mut().for_each(|v| *v *= s);
    }
    let (m, n_out) = (model.latent_dim(), model.n_outputs());
    let mut w = csv_writer(&a.out)?;
    let mut header: Vec<String> = z_headers(m).collect();
    header.extend((1..=n_out).map(|j| format!("out_{j}")));
    w.write_record(&header)?;
    if n_out > 0 {
        for (zi, oi) in z.chunks(m).zip(out.chunks(n_out)) {
            let rec: Vec<String> = zi.iter().chain(oi).map(f64::to_string).collect();
            w.write_record(&rec)?;
        }
    }
    finish_csv(w, &a.out)
}
