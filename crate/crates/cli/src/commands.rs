use crate::io::*;
use crate::*;
use genseg_core::decoder::{classify_activity, decode, ActivityBundle, DecodeConfig, UnitModels};
use genseg_core::error::Error;
use genseg_core::evaluation::{activity_accuracy, segmentation_report};
use genseg_core::format::{self, KeyValueConfig};
use genseg_core::fv::{sliding_window_encode, DEFAULT_WINDOW};
use genseg_core::gmm::{fit_gmm, GmmConfig};
use genseg_core::normality::dimension_pass_report;
use genseg_core::pca::clip_l2_per_dimension;
use genseg_core::pipeline::{train_unit_models, TrainConfig};
use genseg_core::sequence_model::{build_bigram, build_path_grammar, SequenceModel, DEFAULT_SMOOTHING};
use genseg_core::training_data::{generate_dataset, segments_by_label, FrameSequence};
use genseg_core::{fit_pca, rng, Segmentation};
use ndarray::{concatenate, Array2, Axis};
use rand::seq::index;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Resolved settings: flags, then config file, then defaults.
struct Settings {
    cfg: KeyValueConfig,
    cfg_path: PathBuf,
    seed: u64,
    seed_given: bool,
    out: Option<PathBuf>,
    csv: bool,
}

impl Settings {
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        self.cfg
            .parsed(key)
            .map(|v| v.unwrap_or(default))
            .map_err(|e| in_file(&self.cfg_path, e))
    }

    fn out(&self) -> Option<&Path> {
        self.out.as_deref()
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let (cfg, cfg_path) = match &cli.global.config {
        Some(p) => (load_model(p, KeyValueConfig::parse)?, p.clone()),
        None => (KeyValueConfig::default(), PathBuf::new()),
    };
    let mut s = Settings {
        cfg,
        cfg_path,
        seed: 0,
        seed_given: cli.global.seed.is_some(),
        out: cli.global.out.clone(),
        csv: cli.global.convert,
    };
    s.seed = s.pick(cli.global.seed, "seed", 0)?;
    s.seed_given |= s.cfg.get("seed").is_some();
    let threads: usize = s.pick(cli.global.threads, "threads", 0)?;
    if threads > 0 {
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match cli.command {
        Command::FitGmm(a) => fit_gmm_cmd(&s, a),
        Command::Encode(a) => encode_cmd(&s, a),
        Command::FitPca(a) => fit_pca_cmd(&s, a),
        Command::Reduce(a) => reduce_cmd(&s, a),
        Command::Normality(a) => normality_cmd(&s, a),
        Command::TrainHmm(a) => train_hmm_cmd(&s, a),
        Command::BuildGrammar(a) => build_grammar_cmd(&s, a),
        Command::Decode(a) => decode_cmd(&s, a),
        Command::Classify(a) => classify_cmd(&s, a),
        Command::Evaluate(a) => evaluate_cmd(&s, a),
        Command::Synth(a) => synth_cmd(&s, a),
    }
}

fn load_all(s: &Settings, inputs: &[PathBuf]) -> CliResult<Vec<Array2<f64>>> {
    inputs.par_iter().map(|p| load_frames(p, s.csv)).collect()
}

fn pooled(s: &Settings, inputs: &[PathBuf]) -> CliResult<Array2<f64>> {
    let all = load_all(s, inputs)?;
    let dim = all[0].ncols();
    if let Some(i) = all.iter().position(|a| a.ncols() != dim) {
        return Err(data(format!(
            "{}: {} columns, but {} has {dim}",
            inputs[i].display(),
            all[i].ncols(),
            inputs[0].display()
        )));
    }
    let views: Vec<_> = all.iter().map(|a| a.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("equal widths"))
}

fn core_err(e: Error) -> CliError {
    match e {
        Error::NoPath { .. } => CliError::NoPath(e.to_string()),
        other => data(other.to_string()),
    }
}

fn fit_gmm_cmd(s: &Settings, a: FitGmmArgs) -> CliResult<()> {
    let k = s.pick(a.k, "gmm.k", 64)?;
    let max_samples = s.pick(a.samples, "gmm.samples", 200_000)?;
    let max_iters = s.pick(a.max_iters, "gmm.max_iters", 100)?;
    let mut frames = pooled(s, &a.inputs)?;
    if frames.nrows() > max_samples {
        let mut r = rng::seeded(s.seed);
        let mut idx = index::sample(&mut r, frames.nrows(), max_samples).into_vec();
        idx.sort_unstable();
        frames = frames.select(Axis(0), &idx);
    }
    let fit = fit_gmm::<f64>(
        frames.view(),
        k,
        &GmmConfig {
            max_iters,
            seed: s.seed,
            ..Default::default()
        },
    )
    .map_err(core_err)?;
    eprintln!(
        "fit-gmm: K={k} on {} frames, {} iterations, converged={}",
        frames.nrows(),
        fit.iterations,
        fit.converged
    );
    emit(s.out(), &format::gmm_to_string(&fit.gmm))
}

fn per_file<T: Send>(
    inputs: &[PathBuf],
    f: impl Fn(&Path) -> CliResult<T> + Sync,
) -> Vec<CliResult<T>> {
    inputs.par_iter().map(|p| f(p)).collect()
}

fn encode_cmd(s: &Settings, a: EncodeArgs) -> CliResult<()> {
    let gmm = load_model(&a.gmm, format::parse_gmm::<f64>)?;
    let window = s.pick(a.window, "fv.window", DEFAULT_WINDOW)?;
    for r in per_file(&a.inputs, |p| {
        let frames = load_frames(p, s.csv)?;
        let fv = sliding_window_encode(&gmm, frames.view(), window).map_err(|e| in_file(p, e))?;
        save_frames(&a.out_dir.join(format!("{}.gseq", stem(p))), &fv)
    }) {
        r?;
    }
    Ok(())
}

fn fit_pca_cmd(s: &Settings, a: FitPcaArgs) -> CliResult<()> {
    let dim = s.pick(a.dim, "pca.dim", 64)?;
    let whiten = !a.no_whiten && s.pick(None, "pca.whiten", true)?;
    let rows = pooled(s, &a.inputs)?;
    let pca = fit_pca(rows.view(), dim, whiten).map_err(core_err)?;
    emit(s.out(), &format::pca_to_string(&pca))
}

fn reduce_cmd(s: &Settings, a: ReduceArgs) -> CliResult<()> {
    let pca = load_model(&a.pca, format::parse_pca::<f64>)?;
    let clip = !a.no_clip_norm && s.pick(None, "pca.clip_norm", true)?;
    for r in per_file(&a.inputs, |p| {
        let frames = load_frames(p, s.csv)?;
        let mut y = pca.project_rows(frames.view()).map_err(|e| in_file(p, e))?;
        if clip {
            y = clip_l2_per_dimension(y.view());
        }
        save_frames(&a.out_dir.join(format!("{}.gseq", stem(p))), &y)
    }) {
        r?;
    }
    Ok(())
}

fn normality_cmd(s: &Settings, a: NormalityArgs) -> CliResult<()> {
    let rows = pooled(s, &a.inputs)?;
    let alphas = match a.alphas {
        Some(v) => v,
        None => match s.cfg.get("normality.alphas") {
            Some(text) => text
                .split(',')
                .map(|x| x.trim().parse().map_err(|_| data(format!("{}: bad alpha `{x}`", s.cfg_path.display()))))
                .collect::<CliResult<_>>()?,
            None => vec![0.01, 0.05],
        },
    };
    let spd = s.pick(a.samples_per_dim, "normality.samples_per_dim", 2000)?.min(rows.nrows());
    let report = dimension_pass_report(rows.view(), &alphas, spd, s.seed).map_err(core_err)?;
    emit(s.out(), &report.to_csv())
}

fn load_annotated(p: &Path, ann_dir: Option<&Path>, csv: bool) -> CliResult<(FrameSequence<f64>, Segmentation<f64>)> {
    let frames = load_frames(p, csv)?;
    let ann_path = annotation_path(p, ann_dir);
    let ann = load_model(&ann_path, format::parse_segmentation::<f64>)?;
    if ann.len() != frames.nrows() {
        return Err(data(format!(
            "{}: annotation covers {} frames but {} has {}",
            ann_path.display(),
            ann.len(),
            p.display(),
            frames.nrows()
        )));
    }
    Ok((FrameSequence::new(frames), ann))
}

fn train_hmm_cmd(s: &Settings, a: TrainHmmArgs) -> CliResult<()> {
    let cfg = TrainConfig {
        divisor: s.pick(a.divisor, "hmm.divisor", genseg_core::hmm::DEFAULT_STATE_DIVISOR)?,
        mixtures: s.pick(a.mixtures, "hmm.mixtures", 1)?,
        min_samples: s.pick(a.min_samples, "balance.min", 12)?,
        max_samples: s.pick(a.max_samples, "balance.max", 30)?,
        baum_welch_iters: s.pick(a.iters, "hmm.iters", 30)?,
        seed: s.seed,
        ..Default::default()
    };
    let loaded: Vec<_> = per_file(&a.inputs, |p| load_annotated(p, a.ann_dir.as_deref(), s.csv))
        .into_iter()
        .collect::<CliResult<_>>()?;
    let (seqs, anns): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
    let segments = segments_by_label(&seqs, &anns).map_err(core_err)?;
    let trained = train_unit_models(&segments, &cfg).map_err(core_err)?;
    for (label, hmm) in &trained.models {
        eprintln!(
            "train-hmm: {label}: {} states, {} synthetic samples, log-likelihood {:.3}",
            hmm.n_states(),
            trained.synthetic[label],
            trained.log_likelihood[label]
        );
    }
    emit(s.out(), &format::hmms_to_string(trained.models.values()))
}

fn label_sequences(paths: &[PathBuf]) -> CliResult<Vec<Vec<String>>> {
    paths
        .iter()
        .map(|p| {
            let seg = load_model(p, format::parse_segmentation::<f64>)?;
            Ok(seg.labels().into_iter().map(str::to_string).collect())
        })
        .collect()
}

fn build_grammar_cmd(s: &Settings, a: BuildGrammarArgs) -> CliResult<()> {
    let kind = s.pick(a.kind, "grammar.kind", "path".to_string())?;
    let smoothing = s.pick(a.smoothing, "grammar.smoothing", DEFAULT_SMOOTHING)?;
    let seqs = label_sequences(&a.annotations)?;
    let model: SequenceModel<f64> = match kind.as_str() {
        "path" => SequenceModel::PathGrammar(build_path_grammar(&seqs).map_err(core_err)?),
        "bigram" => SequenceModel::Bigram(build_bigram(&seqs, smoothing).map_err(core_err)?),
        other => return Err(CliError::Usage(format!("unknown grammar kind `{other}` (expected path or bigram)"))),
    };
    emit(s.out(), &format::sequence_model_to_string(&model))
}

fn load_units(path: &Path) -> CliResult<UnitModels<f64>> {
    let hmms = load_model(path, format::parse_hmms::<f64>)?;
    let mut out = BTreeMap::new();
    for h in hmms {
        let label = h.label().to_string();
        if out.insert(label.clone(), h).is_some() {
            return Err(data(format!("{}: unit `{label}` defined twice", path.display())));
        }
    }
    Ok(out)
}

fn decode_config(s: &Settings, penalty: Option<f64>, beam: Option<f64>) -> CliResult<DecodeConfig> {
    let beam = match beam {
        Some(b) => Some(b),
        None => s.cfg.parsed("decode.beam").map_err(|e| in_file(&s.cfg_path, e))?,
    };
    Ok(DecodeConfig {
        insertion_penalty: s.pick(penalty, "decode.penalty", 0.0)?,
        beam,
    })
}

/// Runs all files, then reports the first data error, or else every no-path failure.
fn finish(results: Vec<CliResult<()>>) -> CliResult<()> {
    let mut no_path = Vec::new();
    for r in results {
        match r {
            Ok(()) => {}
            Err(CliError::NoPath(m)) => no_path.push(m),
            Err(e) => return Err(e),
        }
    }
    if no_path.is_empty() {
        Ok(())
    } else {
        Err(CliError::NoPath(no_path.join("\n")))
    }
}

fn decode_cmd(s: &Settings, a: DecodeArgs) -> CliResult<()> {
    let hmms = load_units(&a.hmms)?;
    let model = load_model(&a.grammar, format::parse_sequence_model::<f64>)?;
    let cfg = decode_config(s, a.penalty, a.beam)?;
    finish(per_file(&a.inputs, |p| {
        let frames = load_frames(p, s.csv)?;
        let seg = decode(frames.view(), &hmms, &model, &cfg).map_err(|e| in_file(p, e))?;
        write_bytes(
            &a.out_dir.join(format!("{}.seg", stem(p))),
            format::segmentation_to_string(&seg).as_bytes(),
        )
    }))
}

fn classify_cmd(s: &Settings, a: ClassifyArgs) -> CliResult<()> {
    let cfg = decode_config(s, a.penalty, a.beam)?;
    let shared = a.hmms.as_deref().map(load_units).transpose()?;
    let mut bundles = Vec::new();
    for spec in &a.activities {
        let Some((name, files)) = spec.split_once('=') else {
            return Err(CliError::Usage(format!("--activity `{spec}` must look like NAME=GRAMMAR[,HMMS]")));
        };
        let mut parts = files.split(',');
        let grammar = PathBuf::from(parts.next().unwrap_or_default());
        let hmms = match (parts.next(), &shared) {
            (Some(h), _) => load_units(Path::new(h))?,
            (None, Some(h)) => h.clone(),
            (None, None) => return Err(CliError::Usage(format!("activity `{name}` has no HMMs; pass --hmms or NAME=GRAMMAR,HMMS"))),
        };
        bundles.push(ActivityBundle {
            label: name.to_string(),
            hmms,
            model: load_model(&grammar, format::parse_sequence_model::<f64>)?,
        });
    }
    let results: Vec<CliResult<(String, String)>> = per_file(&a.inputs, |p| {
        let frames = load_frames(p, s.csv)?;
        let c = classify_activity(frames.view(), &bundles, &cfg).map_err(|e| in_file(p, e))?;
        let mut row = format!("{},{}", stem(p), c.label);
        for (_, score) in &c.scores {
            write!(row, ",{score}").unwrap();
        }
        Ok((stem(p), row))
    });
    let mut out = String::from("sequence,predicted");
    for b in &bundles {
        write!(out, ",score_{}", b.label).unwrap();
    }
    out.push('\n');
    let mut predicted = BTreeMap::new();
    for r in results {
        let (name, row) = r?;
        let label = row.split(',').nth(1).unwrap().to_string();
        predicted.insert(name, label);
        out.push_str(&row);
        out.push('\n');
    }
    emit(s.out(), &out)?;
    if let Some(truth) = &a.truth {
        let text = read_text(truth)?;
        let (mut gt, mut pred) = (Vec::new(), Vec::new());
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let w: Vec<&str> = line.split_whitespace().collect();
            if w.len() != 2 {
                let offset: usize = text.lines().take(i).map(|l| l.len() + 1).sum();
                return Err(data(format!("{}: byte {offset}: expected `sequence activity`", truth.display())));
            }
            if let Some(p) = predicted.get(w[0]) {
                gt.push(w[1].to_string());
                pred.push(p.clone());
            }
        }
        let acc = activity_accuracy(&gt, &pred).map_err(|e| in_file(truth, e))?;
        eprintln!("activity_accuracy,all,{acc:.6}");
    }
    Ok(())
}

fn evaluate_cmd(s: &Settings, a: EvaluateArgs) -> CliResult<()> {
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for p in &a.predictions {
        let pred = load_model(p, format::parse_segmentation::<f64>)?;
        let gt_path = a.truth_dir.join(format!("{}.ann", stem(p)));
        let gt = load_model(&gt_path, format::parse_segmentation::<f64>)?;
        if gt.len() != pred.len() {
            return Err(data(format!(
                "{}: covers {} frames but {} covers {}",
                p.display(),
                pred.len(),
                gt_path.display(),
                gt.len()
            )));
        }
        gts.push(gt);
        preds.push(pred);
    }
    let pairs: Vec<_> = gts.iter().zip(&preds).collect();
    let exclude = match a.exclude {
        Some(l) => Some(l),
        None => s.cfg.get("evaluate.exclude").map(str::to_string),
    };
    let (report, cm) = segmentation_report(&pairs, exclude.as_deref()).map_err(core_err)?;
    if let Some(path) = &a.confusion {
        write_bytes(path, cm.to_csv().as_bytes())?;
    }
    emit(s.out(), &report.to_csv())
}

fn synth_cmd(s: &Settings, a: SynthArgs) -> CliResult<()> {
    let sequences = s.pick(a.sequences, "synth.sequences", 60)?;
    if a.print_demo {
        return emit(s.out(), &format::demo_dataset_spec_text(sequences, s.seed));
    }
    let mut spec = match &a.spec {
        Some(p) => load_model(p, format::parse_dataset_spec)?,
        None => format::parse_dataset_spec(&format::demo_dataset_spec_text(sequences, s.seed)).map_err(core_err)?,
    };
    if a.sequences.is_some() || s.cfg.get("synth.sequences").is_some() {
        spec.sequences = sequences;
    }
    if s.seed_given || a.spec.is_none() {
        spec.seed = s.seed;
    }
    let out_dir = a.out_dir.expect("required by clap");
    let d = generate_dataset::<f64>(&spec).map_err(core_err)?;
    for (i, (seq, ann)) in d.sequences.iter().zip(&d.annotations).enumerate() {
        let name = format!("seq_{i:04}");
        save_frames(&out_dir.join(format!("{name}.gseq")), &seq.frames)?;
        write_bytes(&out_dir.join(format!("{name}.ann")), format::annotation_to_string(ann).as_bytes())?;
    }
    eprintln!("synth: wrote {} sequences to {}", d.sequences.len(), out_dir.display());
    Ok(())
}
