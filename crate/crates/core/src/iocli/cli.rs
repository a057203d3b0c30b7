//! Command-line front end.
//!
//! Settings resolve as defaults, then `--config`, then explicit flags.
//! Exit codes: 0 success, 1 usage, 2 data or I/O error, 3 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::cfeval::{counterfactual_similarity, explain_pair, perturb, top1, MaskSpec, RelevanceMap, SimilarityMatrix};
use crate::error::{Error, Result};
use crate::toyworld::{gen_dataset, prepare_samples, train, EvalSet, PreparedSample, ToyDataset};

use super::annotation::ingest_phrases;
use super::binfmt::write_file;
use super::config::{parse_list, RunConfig};
use super::dataset::{load_dataset, load_params, save_dataset, save_params};
use super::embedding::write_embeddings;
use super::heatmap::write_heatmap;
use super::report::{
    aggregate_sweeps, fmt_g6, read_sweep, render_curves, render_loss_curve, render_report, render_sweep,
    SweepRow,
};

#[derive(Debug, Parser)]
#[command(name = "partlens", version, about = "Phrase grounding and counterfactual region removal on a toy retrieval world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Random seed for generation and training.
    #[arg(long)]
    pub seed: Option<u64>,
    /// key=value settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        identities: Option<usize>,
        #[arg(long)]
        samples_per_identity: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the toy encoder; writes params.bin, loss.csv, embeddings.bin and config.txt.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        lambda_part: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Per-phrase heatmaps and masks for one query against one gallery image.
    Explain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        query: usize,
        /// Gallery index; defaults to the query's top-1 match.
        #[arg(long)]
        gallery: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Counterfactual region removal over every (alpha, p) pair.
    Counterfactual {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated thresholds.
        #[arg(long)]
        alpha: Option<String>,
        /// Comma-separated removal fractions.
        #[arg(long)]
        p: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Average sweep CSVs into one curve table.
    Report {
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData { common, .. }
            | Command::Train { common, .. }
            | Command::Explain { common, .. }
            | Command::Counterfactual { common, .. }
            | Command::Report { common, .. } => common,
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads a dataset and checks its annotations against the scene layout.
fn load_checked(dir: &Path, phrase_slots: usize) -> Result<ToyDataset> {
    let dataset = load_dataset(dir)?;
    let docs = dataset
        .annotations
        .iter()
        .map(|a| serde_json::to_value(a).map_err(|e| Error::data(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let ingested = ingest_phrases(&docs, phrase_slots)?;
    if ingested.phrases.len() != dataset.len() {
        return Err(Error::data("some annotations could not be ingested"));
    }
    for (n, (scene, phrases)) in dataset.scenes.iter().zip(&ingested.phrases).enumerate() {
        let mut expected = scene.phrases();
        expected.truncate(phrase_slots);
        if &expected != phrases {
            return Err(Error::data(format!("annotation {n} disagrees with its scene")));
        }
    }
    Ok(dataset)
}

fn gen_data_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let d = gen_dataset(cfg.identities, cfg.samples_per_identity, cfg.grid, cfg.image_size, cfg.seed)?;
    save_dataset(&d, out)?;
    println!("wrote {} scenes of {} identities to {}", d.len(), d.num_identities(), out.display());
    Ok(())
}

fn train_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let dataset = load_checked(data, cfg.train.phrase_slots)?;
    let outcome = train(&dataset, &cfg.train, cfg.seed)?;
    create_dir(out)?;
    save_params(&outcome.encoder, out.join("params.bin"))?;
    write_file(&out.join("loss.csv"), render_loss_curve(&outcome.curve).as_bytes())?;
    write_file(&out.join("config.txt"), cfg.render().as_bytes())?;
    let samples = prepare_samples(&outcome.encoder, &dataset, cfg.train.phrase_slots)?;
    let refs: Vec<&PreparedSample> = samples.iter().collect();
    let (batch, _) = outcome.encoder.forward_batch(&refs, cfg.train.phrase_slots)?;
    write_embeddings(&batch, out.join("embeddings.bin"))?;
    if let Some(last) = outcome.curve.last() {
        println!("trained {} epochs, final loss {}", outcome.curve.len(), fmt_g6(last.total));
    }
    Ok(())
}

fn mask_as_map(bits: &[bool], height: usize, width: usize) -> RelevanceMap {
    RelevanceMap {
        phrase: 0,
        height,
        width,
        values: bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        grid: (1, 1),
        degenerate: false,
    }
}

fn explain_cmd(
    cfg: &RunConfig,
    data: &Path,
    params: &Path,
    query: usize,
    gallery: Option<usize>,
    out: &Path,
) -> Result<()> {
    let spec = MaskSpec::new(cfg.alphas[0], cfg.ps[0])?;
    let dataset = load_checked(data, cfg.train.phrase_slots)?;
    let encoder = load_params(params)?;
    let set = EvalSet::build(&encoder, &dataset.scenes, cfg.train.phrase_slots)?;
    if query >= dataset.len() {
        return Err(Error::data(format!("query {query} out of range (0..{})", dataset.len())));
    }
    let j = match gallery {
        Some(j) if j >= dataset.len() => {
            return Err(Error::data(format!("gallery {j} out of range (0..{})", dataset.len())))
        }
        Some(j) => j,
        None => top1(&eval_similarity(&set)?, query)?,
    };
    let image = &set.gallery_images[j];
    let explained = explain_pair(
        &set.query_phrases[query],
        &set.gallery[j].patches,
        set.grid,
        (image.height, image.width),
        spec,
    )?;
    create_dir(out)?;
    let base = crate::diffmath::dot(set.queries.row(query), &set.gallery[j].global);
    let phrases = {
        let mut p = dataset.scenes[query].phrases();
        p.truncate(cfg.train.phrase_slots);
        p
    };
    let mut table = String::from("slot,phrase,masked_pixels,delta_s\n");
    for (m, (map, mask)) in explained.iter().enumerate() {
        write_heatmap(map, out.join(format!("heatmap_{m}.pgm")))?;
        write_heatmap(&mask_as_map(&mask.bits, mask.height, mask.width), out.join(format!("mask_{m}.pgm")))?;
        let ds = if mask.is_empty() {
            0.0
        } else {
            base - counterfactual_similarity(set.queries.row(query), &perturb(image, mask)?, &encoder)?
        };
        table.push_str(&format!("{m},{},{},{}\n", phrases[m], mask.count(), fmt_g6(ds)));
    }
    write_file(&out.join("explain.csv"), table.as_bytes())?;
    println!("explained query {query} against gallery {j}: {} phrases", explained.len());
    Ok(())
}

fn counterfactual_cmd(cfg: &RunConfig, data: &Path, params: &Path, out: &Path) -> Result<()> {
    let dataset = load_checked(data, cfg.train.phrase_slots)?;
    let encoder = load_params(params)?;
    let set = EvalSet::build(&encoder, &dataset.scenes, cfg.train.phrase_slots)?;
    create_dir(out)?;
    let mut rows = Vec::new();
    for &alpha in &cfg.alphas {
        for &p in &cfg.ps {
            let report = set.run(&encoder, MaskSpec::new(alpha, p)?)?;
            let name = format!("report_a{}_p{}.csv", fmt_g6(alpha), fmt_g6(p));
            write_file(&out.join(&name), render_report(&report).as_bytes())?;
            info!("alpha {alpha} p {p}: {:?}", report.drops[0].delta_pct);
            rows.push(SweepRow::from_report(&report));
        }
    }
    write_file(&out.join("sweep.csv"), render_sweep(&rows).as_bytes())?;
    println!("wrote {} counterfactual settings to {}", rows.len(), out.display());
    Ok(())
}

fn report_cmd(inputs: &[PathBuf], out: &Path) -> Result<()> {
    let sweeps = inputs.iter().map(read_sweep).collect::<Result<Vec<_>>>()?;
    let curves = aggregate_sweeps(&sweeps)?;
    write_file(out, render_curves(&curves).as_bytes())?;
    println!("averaged {} sweeps into {} rows", sweeps.len(), curves.len());
    Ok(())
}

/// Executes a parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    let mut cfg = resolve(cli.command.common())?;
    match &cli.command {
        Command::GenData {
            out,
            identities,
            samples_per_identity,
            ..
        } => {
            if let Some(n) = identities {
                cfg.identities = *n;
            }
            if let Some(n) = samples_per_identity {
                cfg.samples_per_identity = *n;
            }
            gen_data_cmd(&cfg, out)
        }
        Command::Train {
            data,
            out,
            epochs,
            lambda_part,
            ..
        } => {
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(l) = lambda_part {
                cfg.train.loss.lambda_part = *l;
            }
            train_cmd(&cfg, data, out)
        }
        Command::Explain {
            data,
            params,
            query,
            gallery,
            out,
            alpha,
            p,
            ..
        } => {
            if let Some(a) = alpha {
                cfg.alphas = vec![*a];
            }
            if let Some(p) = p {
                cfg.ps = vec![*p];
            }
            explain_cmd(&cfg, data, params, *query, *gallery, out)
        }
        Command::Counterfactual {
            data,
            params,
            out,
            alpha,
            p,
            ..
        } => {
            if let Some(a) = alpha {
                cfg.alphas = parse_list("alpha", a)?;
            }
            if let Some(p) = p {
                cfg.ps = parse_list("p", p)?;
            }
            counterfactual_cmd(&cfg, data, params, out)
        }
        Command::Report { inputs, out, .. } => report_cmd(inputs, out),
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Similarity matrix of an evaluation set, exposed for tests and tools.
pub fn eval_similarity(set: &EvalSet) -> Result<SimilarityMatrix> {
    crate::cfeval::similarity_matrix(&set.queries, &set.input().gallery_matrix()?, &set.query_ids, &set.gallery_ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["partlens", "train", "--bogus"]), 1);
        assert_eq!(run(["partlens"]), 1);
        assert_eq!(run(["partlens", "frobnicate"]), 1);
        assert_eq!(run(["partlens", "--help"]), 0);
    }

    #[test]
    fn missing_data_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nothing");
        let m = missing.to_str().unwrap();
        assert_eq!(run(["partlens", "train", "--data", m, "--out", m]), 2);
    }

    #[test]
    fn bad_config_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.txt");
        std::fs::write(&cfg, "not_a_key=1\n").unwrap();
        let out = dir.path().join("d");
        assert_eq!(
            run(["partlens", "gen-data", "--out", out.to_str().unwrap(), "--config", cfg.to_str().unwrap()]),
            1
        );
    }

    #[test]
    fn invalid_p_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("d");
        let ds = d.to_str().unwrap();
        assert_eq!(run(["partlens", "gen-data", "--out", ds, "--identities", "3", "--samples-per-identity", "2"]), 0);
        let t = dir.path().join("t");
        let ts = t.to_str().unwrap();
        assert_eq!(run(["partlens", "train", "--data", ds, "--out", ts, "--epochs", "1"]), 0);
        let params = t.join("params.bin");
        let ps = params.to_str().unwrap();
        let c = dir.path().join("c");
        let cs = c.to_str().unwrap();
        assert_eq!(run(["partlens", "counterfactual", "--data", ds, "--params", ps, "--out", cs, "--p", "1.5"]), 2);
        assert_eq!(run(["partlens", "counterfactual", "--data", ds, "--params", ps, "--out", cs, "--p", "x"]), 1);
    }
}
