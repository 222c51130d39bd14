use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use structpose::config::RunConfig;
use structpose::fsutil::{self, StagedDir};
use structpose::infer::{
    decode, decode_all, estimate_pairwise_params, estimates_csv, evaluate_pcp, limbs_for_tree, pcp_strict,
    pdj_curve, score_samples, DecodeMode, PairwiseParams, ScoreMapSet,
};
use structpose::model::{checkpoint, train as fit, PoseNet, TrainSample};
use structpose::structured::{format_rf_table, paper_table1, receptive_field_of, JointTree};
use structpose::synth::io::{encode_pgm, read_pgm};
use structpose::synth::{cluster_mixtures, generate, read_dataset, to_train_samples, write_dataset, Dataset};
use structpose::tensor::Tensor;
use structpose::{Error, Result};

use crate::ConfigSource;

pub const CHECKPOINT_FILE: &str = "model.spl";
pub const CONFIG_FILE: &str = "config.ini";
pub const PAIRWISE_FILE: &str = "pairwise.csv";

fn parse_config_file(path: &Path) -> Result<RunConfig> {
    RunConfig::parse(&fsutil::read_to_string(path)?).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn load_config(source: &ConfigSource) -> Result<RunConfig> {
    match (&source.config, &source.preset) {
        (Some(path), _) => parse_config_file(path),
        (None, Some(name)) => RunConfig::preset(name),
        (None, None) => Ok(RunConfig::default()),
    }
}

fn write(stage: &StagedDir, name: &str, bytes: &[u8]) -> Result<()> {
    fsutil::write_atomic(&stage.path().join(name), bytes)
}

/// Reads a dataset and checks it fits the model's tree and input size.
fn load_dataset(dir: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let data = read_dataset(dir)?;
    if data.tree != cfg.model.tree || data.size != cfg.model.input_size {
        return Err(Error::Data(format!(
            "{} holds {}px {} poses, the model expects {}px {}",
            dir.display(),
            data.size,
            data.tree,
            cfg.model.input_size,
            cfg.model.tree
        )));
    }
    if data.samples.is_empty() {
        return Err(Error::Data(format!("{} holds no samples", dir.display())));
    }
    Ok(data)
}

pub fn gen_data(source: &ConfigSource, out: &Path, seed: Option<u64>, count: Option<usize>) -> Result<()> {
    let cfg = load_config(source)?;
    let seed = seed.unwrap_or(cfg.data.seed);
    let count = count.unwrap_or(cfg.data.train_count);
    if count == 0 {
        return Err(Error::Config("--count must be positive".into()));
    }
    let tree = cfg.model.joint_tree()?;
    let mut samples = generate(&cfg.data.skeleton, count, seed)?;
    cluster_mixtures(&mut samples, &tree, cfg.model.mixtures, seed)?;
    let stage = StagedDir::new(out)?;
    write_dataset(stage.path(), &tree, cfg.model.input_size, &samples)?;
    stage.commit()?;
    eprintln!("wrote {count} samples to {}", out.display());
    Ok(())
}

pub fn train(source: &ConfigSource, data: &Path, out: &Path, val: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(source)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let tree = cfg.model.joint_tree()?;
    let mut samples = load_dataset(data, &cfg)?.samples;
    cluster_mixtures(&mut samples, &tree, cfg.model.mixtures, cfg.train.seed)?;
    let train_set: Vec<TrainSample> = to_train_samples(&samples, &cfg.model)?;
    let mut params = estimate_pairwise_params(&samples, &tree, cfg.model.downsample)?;
    params.weights = cfg.infer.pairwise_weights;
    let val_samples = val.map(|v| load_dataset(v, &cfg)).transpose()?.map(|d| d.samples);

    let mut model = PoseNet::new(&cfg.model, cfg.train.seed)?;
    eprintln!("{} parameters, {} training samples", model.param_count(), train_set.len());
    let mode = cfg.infer.decode;
    let mut score_val = |m: &PoseNet<f32>| -> Result<f64> {
        let v = val_samples.as_deref().expect("only called with a validation set");
        Ok(evaluate_pcp(m, v, &params, mode)?.mean())
    };
    let validate: Option<&mut dyn FnMut(&PoseNet<f32>) -> Result<f64>> =
        if val_samples.is_some() { Some(&mut score_val) } else { None };
    let report = fit(&mut model, &train_set, &cfg.train, validate, |e| match e.val_pcp {
        Some(p) => eprintln!("epoch {:>3}  loss {:.5}  val pcp {p:.2}", e.epoch, e.train_loss),
        None => eprintln!("epoch {:>3}  loss {:.5}", e.epoch, e.train_loss),
    })?;

    let stage = StagedDir::new(out)?;
    checkpoint::save(&model, &stage.path().join(CHECKPOINT_FILE))?;
    write(&stage, "loss.csv", report.to_csv().as_bytes())?;
    write(&stage, CONFIG_FILE, cfg.to_ini().as_bytes())?;
    write(&stage, PAIRWISE_FILE, params.offsets_csv(&tree).as_bytes())?;
    stage.commit()?;
    eprintln!("wrote {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

/// The model, its configuration and its pairwise terms, found next to the
/// checkpoint unless a configuration is given.
fn load_trained(checkpoint_path: &Path, config: Option<&Path>) -> Result<(RunConfig, PoseNet<f32>, PairwiseParams)> {
    let dir = checkpoint_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let cfg = parse_config_file(&config.map(Path::to_path_buf).unwrap_or_else(|| dir.join(CONFIG_FILE)))?;
    let model = checkpoint::load(checkpoint_path, &cfg.model)?;
    let params = PairwiseParams::from_offsets_csv(
        &fsutil::read_to_string(&dir.join(PAIRWISE_FILE))?,
        model.tree(),
        cfg.infer.pairwise_weights,
    )?;
    Ok((cfg, model, params))
}

fn decode_mode(cfg: &RunConfig, flag: Option<&str>) -> Result<DecodeMode> {
    flag.map(str::parse).transpose().map(|m| m.unwrap_or(cfg.infer.decode))
}

pub fn eval(checkpoint_path: &Path, data: &Path, out: &Path, config: Option<&Path>, mode: Option<&str>) -> Result<()> {
    let (cfg, model, params) = load_trained(checkpoint_path, config)?;
    let mode = decode_mode(&cfg, mode)?;
    let samples = load_dataset(data, &cfg)?.samples;
    let tree = model.tree();
    let scores = score_samples(&model, &samples, cfg.infer.batch_size)?;
    let estimates = decode_all(&scores, &params, tree, mode)?;
    let est: Vec<Vec<[f64; 2]>> = estimates.iter().map(|e| e.pixels.clone()).collect();
    let truth: Vec<Vec<[f64; 2]>> = samples.iter().map(|s| s.joints.clone()).collect();
    let pcp = pcp_strict(&est, &truth, &limbs_for_tree(tree))?;
    let pdj = pdj_curve(&est, &truth, &cfg.infer.pdj_thresholds, cfg.infer.pose_scale)?;

    let stage = StagedDir::new(out)?;
    write(&stage, "pcp.csv", pcp.to_csv().as_bytes())?;
    write(&stage, "pdj.csv", pdj.to_csv(tree).as_bytes())?;
    write(&stage, "estimates.csv", estimates_csv(&estimates, tree).as_bytes())?;
    stage.commit()?;
    println!("{} samples, decode {mode}: mean strict PCP {:.2}", samples.len(), pcp.mean());
    Ok(())
}

/// Maps `values` linearly onto `0..=255`; a constant map becomes all zeros.
fn normalize_u8(values: &[f64]) -> (Vec<u8>, f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let px = values
        .iter()
        .map(|v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect();
    (px, lo, hi)
}

pub fn predict(
    checkpoint_path: &Path,
    image: &Path,
    out: &Path,
    config: Option<&Path>,
    mode: Option<&str>,
    raw: bool,
) -> Result<()> {
    let (cfg, model, params) = load_trained(checkpoint_path, config)?;
    let mode = decode_mode(&cfg, mode)?;
    let (w, h, pixels) = read_pgm(image)?;
    let size = cfg.model.input_size;
    if w != size || h != size {
        return Err(Error::Data(format!("{} is {w}x{h}, the model expects {size}x{size}", image.display())));
    }
    let data = pixels.iter().map(|&v| v as f32 / 255.0 - 0.5).collect();
    let scores = model.predict(&Tensor::from_vec(&[1, 1, size, size], data)?)?;
    let tree: &JointTree = model.tree();
    let maps = ScoreMapSet::from_tensor(&scores, 0, tree.len(), cfg.model.mixtures, cfg.model.downsample)?;
    let estimate = decode(&maps, &params, tree, mode)?;

    let stage = StagedDir::new(out)?;
    write(&stage, "estimates.csv", estimates_csv(std::slice::from_ref(&estimate), tree).as_bytes())?;
    fsutil::create_dir_all(&stage.path().join("maps"))?;
    let mut ranges = String::from("map,min,max\n");
    let named: Vec<(String, Vec<f64>)> = (0..tree.len())
        .map(|j| (tree.name(j).to_string(), maps.unary(j)))
        .chain([("background".to_string(), maps.background().to_vec())])
        .collect();
    for (name, values) in &named {
        let (px, lo, hi) = normalize_u8(values);
        write(&stage, &format!("maps/{name}.pgm"), &encode_pgm(maps.width, maps.height, &px))?;
        let _ = writeln!(ranges, "{name},{lo:?},{hi:?}");
        if raw {
            let bytes: Vec<u8> = values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
            write(&stage, &format!("maps/{name}.f32"), &bytes)?;
        }
    }
    write(&stage, "maps/ranges.csv", ranges.as_bytes())?;
    stage.commit()?;
    for j in 0..tree.len() {
        let [x, y] = estimate.pixels[j];
        println!("{:<12} {x:>6.1} {y:>6.1}", tree.name(j));
    }
    Ok(())
}

pub fn rf_report(config: Option<&Path>, preset: Option<&str>) -> Result<()> {
    let layers = match (config, preset) {
        (None, Some("paper-table1")) => paper_table1(3),
        (Some(path), _) => parse_config_file(path)?.model.layer_descriptors(),
        (None, Some(name)) => RunConfig::preset(name)?.model.layer_descriptors(),
        (None, None) => RunConfig::default().model.layer_descriptors(),
    };
    print!("{}", format_rf_table(&receptive_field_of(&layers)));
    Ok(())
}

pub fn print_config(source: &ConfigSource) -> Result<()> {
    print!("{}", load_config(source)?.to_ini());
    Ok(())
}
