use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use inhibit_core::analysis::{
    default_thresholds, figure2_csv, figure3_csv, neuron_report, spearman, threshold_sweep, NeuronClass,
};
use inhibit_core::data::{
    build_mixed_dataset, gen_squares, load_mnist_idx, read_mixn, write_mixn, Dataset, DatasetSplit, SquaresConfig,
    TypeTag,
};
use inhibit_core::model::Arch;
use inhibit_core::train::{load_checkpoint, mean_std, save_checkpoint, train_runs, write_report_csv, RunReport};
use inhibit_core::InhibitionMode;
use log::info;

use crate::config::RunConfig;
use crate::CliError;

const IMAGES_FILE: &str = "train-images-idx3-ubyte";
const LABELS_FILE: &str = "train-labels-idx1-ubyte";

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} not found: {}", path.display())))
    }
}

fn runtime(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError {
        code: 1,
        message: format!("{context}: {e}"),
    }
}

/// Squares use `seed + 1` and the shuffle uses `seed`.
pub fn gen_data(mnist_dir: &Path, out: &Path, seed: u64, digits: Option<usize>) -> Result<(), CliError> {
    let (images, labels) = (mnist_dir.join(IMAGES_FILE), mnist_dir.join(LABELS_FILE));
    require(&images, "MNIST images file")?;
    require(&labels, "MNIST labels file")?;
    let mut mnist = load_mnist_idx(&images, &labels)?;
    if let Some(n) = digits {
        if n == 0 || n > mnist.len() {
            return Err(CliError::usage(format!("--digits must be in 1..={}", mnist.len())));
        }
        mnist.truncate(n);
    }
    let squares = gen_squares(mnist.len(), seed + 1, &SquaresConfig::default())?;
    let (dataset, split) = build_mixed_dataset(mnist, squares, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| runtime("creating output directory", e))?;
    }
    write_mixn(out, dataset.samples())?;
    println!("{}", summary(&dataset, &split));
    println!("wrote {}", out.display());
    Ok(())
}

fn summary(dataset: &Dataset, split: &DatasetSplit) -> String {
    let mut counts = [[0usize; 10]; 2];
    for s in dataset.samples() {
        counts[s.type_tag().code() as usize][s.label() as usize] += 1;
    }
    let mut out = format!(
        "{} samples; split {}/{}/{}\nlabel   digits  squares\n",
        dataset.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    for (label, (d, q)) in counts[0].iter().zip(&counts[1]).enumerate() {
        let _ = writeln!(out, "{label:>5} {d:>8} {q:>8}");
    }
    let _ = write!(
        out,
        "total {:>8} {:>8}",
        counts[TypeTag::Digit.code() as usize].iter().sum::<usize>(),
        counts[TypeTag::Squares.code() as usize].iter().sum::<usize>()
    );
    out
}

fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, DatasetSplit), CliError> {
    require(&cfg.data.dataset, "dataset")?;
    let dataset = read_mixn(&cfg.data.dataset)?;
    let split = DatasetSplit::by_ratio(dataset.len(), cfg.data.split_seed);
    Ok((dataset, split))
}

fn variant_name(cfg: &RunConfig) -> String {
    if cfg.model.arch == Arch::Baseline.name() {
        "baseline".into()
    } else {
        cfg.model.inhibition.clone()
    }
}

/// Trains every seed of `cfg` into its own run directory.
fn run(cfg: &RunConfig, dataset: &Dataset, split: &DatasetSplit) -> Result<(PathBuf, Vec<RunReport>), CliError> {
    let train_cfg = cfg.train_config()?;
    let dir = cfg
        .output_root()
        .join(format!("{}-{}-seed{}", cfg.output.name, variant_name(cfg), cfg.train.seed));
    fs::create_dir_all(&dir).map_err(|e| runtime(&format!("creating {}", dir.display()), e))?;
    fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|e| runtime("writing config snapshot", e))?;
    info!("training {} into {}", variant_name(cfg), dir.display());
    let reports = train_runs(&train_cfg, dataset, split).map_err(|e| runtime("training failed", e))?;
    for r in &reports {
        save_checkpoint(&dir.join(format!("model-seed{}.mckp", r.seed)), &r.model)?;
    }
    write_report_csv(&dir.join("report.csv"), &reports)?;
    Ok((dir, reports))
}

fn accuracy_line(name: &str, reports: &[RunReport]) -> String {
    let accs: Vec<f64> = reports.iter().map(|r| r.test.accuracy).collect();
    let (mean, std) = mean_std(&accs);
    format!("{name}: test accuracy {:.2}% ± {:.2} over {} seeds", mean * 100.0, std * 100.0, accs.len())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

pub fn train(config: Option<&Path>, mode: Option<InhibitionMode>, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    if let Some(m) = mode {
        cfg.model.inhibition = m.name().into();
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.train_config()?;
    let (dataset, split) = load_dataset(&cfg)?;
    let (dir, reports) = run(&cfg, &dataset, &split)?;
    println!("{}", accuracy_line(&variant_name(&cfg), &reports));
    println!("run directory: {}", dir.display());
    Ok(())
}

pub fn sweep(config: Option<&Path>, modes: &[InhibitionMode], baseline: bool) -> Result<(), CliError> {
    let base = load_config(config)?;
    base.train_config()?;
    let (dataset, split) = load_dataset(&base)?;
    let mut variants = Vec::new();
    if baseline {
        let mut cfg = base.clone();
        cfg.model.arch = Arch::Baseline.name().into();
        cfg.model.inhibition = InhibitionMode::None.name().into();
        variants.push(cfg);
    }
    for m in modes {
        let mut cfg = base.clone();
        cfg.model.arch = Arch::Moe.name().into();
        cfg.model.inhibition = m.name().into();
        variants.push(cfg);
    }
    let mut table = String::from("variant,seed,test_accuracy,test_nll\n");
    let mut lines = Vec::new();
    for cfg in &variants {
        let (_, reports) = run(cfg, &dataset, &split)?;
        for r in &reports {
            let _ = writeln!(table, "{},{},{},{}", variant_name(cfg), r.seed, r.test.accuracy, r.test.mean_nll);
        }
        lines.push(accuracy_line(&variant_name(cfg), &reports));
    }
    let root = base.output_root();
    fs::create_dir_all(&root).map_err(|e| runtime("creating output root", e))?;
    let path = root.join(format!("{}-sweep.csv", base.output.name));
    fs::write(&path, table).map_err(|e| runtime("writing sweep table", e))?;
    for l in lines {
        println!("{l}");
    }
    println!("sweep table: {}", path.display());
    Ok(())
}

/// Uses the test split of the dataset (80/10/10 by position).
pub fn analyze(checkpoint: &Path, dataset: &Path, out: Option<&Path>, thresholds: usize) -> Result<(), CliError> {
    require(checkpoint, "checkpoint")?;
    require(dataset, "dataset")?;
    if thresholds == 0 {
        return Err(CliError::usage("--thresholds must be positive"));
    }
    let mut model = load_checkpoint(checkpoint)?;
    let mode = model.config().inhibition;
    if !mode.has_gate() {
        return Err(CliError::usage(format!(
            "checkpoint was trained with inhibition `{mode}`, which has no sigmoid gate to analyze; \
             use a glu, pretext, posttext or global checkpoint"
        )));
    }
    let data = read_mixn(dataset)?;
    let split = DatasetSplit::by_ratio(data.len(), 0);
    let stats = neuron_report(&mut model, &data, &split.test, 5120)?;
    let sweep = threshold_sweep(&stats, &default_thresholds(thresholds));
    let dir = out.map_or_else(
        || checkpoint.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
        Path::to_path_buf,
    );
    fs::create_dir_all(&dir).map_err(|e| runtime("creating output directory", e))?;
    fs::write(dir.join("figure2.csv"), figure2_csv(&stats)).map_err(|e| runtime("writing figure2.csv", e))?;
    fs::write(dir.join("figure3.csv"), figure3_csv(&sweep)).map_err(|e| runtime("writing figure3.csv", e))?;
    let abs_c: Vec<f64> = stats.iter().map(|s| s.abs_pearson).collect();
    let act: Vec<f64> = stats.iter().map(|s| s.mean_gate_activation).collect();
    let rho = spearman(&abs_c, &act)?;
    let disc = stats.iter().filter(|s| s.class == NeuronClass::Discriminative).count();
    let below = sweep.iter().filter(|p| p.common >= p.discriminative).count();
    println!(
        "{} neurons ({} common, {disc} discriminative); Spearman rho(|c|, gate) = {rho:+.3}; \
         common >= discriminative at {below}/{thresholds} thresholds",
        stats.len(),
        stats.len() - disc
    );
    println!("wrote {} and {}", dir.join("figure2.csv").display(), dir.join("figure3.csv").display());
    Ok(())
}
