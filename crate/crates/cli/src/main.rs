use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use neujive::inference::{
    diproperm, holdout_harness, FeatureSource, LabeledScores, PrecomputedFeatures, Protocol, StrictNeujiveFeatures,
};
use neujive::io::{
    directions_to_configs, group_blocks, labels_for, read_labels, read_landmarks_path, to_direction, to_json,
    write_case_matrix, write_labels, write_landmarks_path, write_series, RunConfig,
};
use neujive::pipeline::{group_difference_map, json_digest, neujive, neujive_spherical, NeujiveResult};
use neujive::pns::{pns_fit_with, FitOptions};
use neujive::preshape::{gpa, to_preshape, LandmarkConfig};
use neujive::simulate::{
    make_twogroup_blocks, simulate_circle_blocks, synthetic_skull_population, topmost_landmark, CircleSimConfig,
    SkullPopulationConfig, TwoGroupModification,
};
use neujive::sphere::UnitVector;
use neujive::Error;

#[derive(Parser)]
#[command(name = "neujive", version, about = "Joint and individual shape variation on nested spheres")]
struct Cli {
    /// Worker threads for the parallel parts (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Random seed.
    #[arg(long, global = true, env = "NEUJIVE_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Circle,
    Twogroup,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputKind {
    /// Landmark configurations (converted to pre-shapes).
    Landmarks,
    /// Each configuration's coordinates read as one point on a sphere.
    Sphere,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Simulate {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        /// Base landmark population for the two-group scenario (default: synthetic).
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Procrustes-align one block.
    Gpa {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit principal nested spheres to one block of (aligned) configurations.
    Pns {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = InputKind::Landmarks)]
        input_kind: InputKind,
        /// Force great subspheres at every level.
        #[arg(long)]
        force_great: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full decomposition of one or more landmark files.
    Decompose {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = InputKind::Landmarks)]
        input_kind: InputKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Permutation test on the joint components of a decomposition.
    Diproperm {
        #[arg(long)]
        decomposition: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Block whose joint component is tested (default: all blocks stacked).
        #[arg(long)]
        block: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        n_perm: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated-holdout classification on joint components.
    Classify {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = InputKind::Landmarks)]
        input_kind: InputKind,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        block: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-landmark distances between the group means of the joint components.
    Reconstruct {
        #[arg(long)]
        decomposition: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Report distances in the units of the input instead of pre-shape units.
        #[arg(long)]
        restore_scale: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Common wrapper of every JSON output.
#[derive(Serialize)]
struct Output<'a, T: Serialize> {
    command: &'a str,
    seed: u64,
    input_digest: String,
    config_digest: String,
    result: T,
}

fn file_digest(paths: &[&Path]) -> Result<String, Error> {
    let mut h = Sha256::new();
    for p in paths {
        h.update(fs::read(p)?);
    }
    Ok(hex::encode(h.finalize()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

fn create(path: &Path, name: &str) -> Result<fs::File, Error> {
    Ok(fs::File::create(path.join(name))?)
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::from_json(&fs::read_to_string(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn load_blocks(inputs: &[PathBuf]) -> Result<Vec<Vec<LandmarkConfig>>, Error> {
    let mut all = Vec::new();
    for p in inputs {
        all.extend(read_landmarks_path(p)?);
    }
    group_blocks(all)
}

fn as_directions(blocks: &[Vec<LandmarkConfig>]) -> Result<Vec<Vec<UnitVector>>, Error> {
    blocks.iter().map(|b| b.iter().map(to_direction).collect()).collect()
}

fn run_neujive(blocks: &[Vec<LandmarkConfig>], kind: InputKind, cfg: &RunConfig, seed: u64) -> Result<NeujiveResult, Error> {
    let ncfg = cfg.neujive(seed);
    match kind {
        InputKind::Landmarks => neujive(blocks, &ncfg),
        InputKind::Sphere => {
            let mut res = neujive_spherical(&as_directions(blocks)?, &ncfg)?;
            res.case_ids = blocks[0].iter().map(|c| c.case_id.clone()).collect();
            for (b, src) in res.blocks.iter_mut().zip(blocks) {
                b.block_id = src[0].object_label.clone();
            }
            Ok(res)
        }
    }
}

fn stacked_joint(res: &NeujiveResult, block: Option<usize>) -> Result<DMatrix<f64>, Error> {
    let parts: Vec<&DMatrix<f64>> = match block {
        Some(k) => vec![&res.block(k)?.decomposition.joint],
        None => res.blocks.iter().map(|b| &b.decomposition.joint).collect(),
    };
    let p: usize = parts.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(p, res.n_cases());
    let mut r = 0;
    for m in parts {
        out.rows_mut(r, m.nrows()).copy_from(m);
        r += m.nrows();
    }
    Ok(out)
}

fn read_decomposition(path: &Path) -> Result<NeujiveResult, Error> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn read_case_labels(path: &Path, case_ids: &[String]) -> Result<Vec<u8>, Error> {
    labels_for(&read_labels(fs::File::open(path)?)?, case_ids)
}

fn run(cli: Cli) -> Result<(), Error> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate {
            scenario,
            n,
            sigma,
            base,
            out,
        } => {
            fs::create_dir_all(&out)?;
            match scenario {
                Scenario::Circle => {
                    let cfg = CircleSimConfig {
                        n,
                        sigma,
                        seed,
                        ..CircleSimConfig::default()
                    };
                    let sim = simulate_circle_blocks(&cfg)?;
                    let ids: Vec<String> = (0..n).map(|i| format!("case{i:04}")).collect();
                    write_landmarks_path(&out.join("landmarks.csv"), &directions_to_configs(&sim.blocks, &ids)?)?;
                    write_series(create(&out, "theta.csv")?, ["case", "theta"], &sim.theta)?;
                    write_json(
                        &out.join("simulate.json"),
                        &Output {
                            command: "simulate",
                            seed,
                            input_digest: String::new(),
                            config_digest: json_digest(&cfg),
                            result: &cfg,
                        },
                    )?;
                }
                Scenario::Twogroup => {
                    let (population, input_digest) = match &base {
                        Some(p) => (read_landmarks_path(p)?, file_digest(&[p])?),
                        None => (
                            synthetic_skull_population(&SkullPopulationConfig {
                                n,
                                seed,
                                ..SkullPopulationConfig::default()
                            })?,
                            String::new(),
                        ),
                    };
                    let m = TwoGroupModification {
                        landmark_index: topmost_landmark(&population),
                        ..TwoGroupModification::default()
                    };
                    let two = make_twogroup_blocks(&population, &m)?;
                    write_landmarks_path(&out.join("landmarks.csv"), &two.blocks.concat())?;
                    let ids: Vec<String> = two.blocks[0].iter().map(|c| c.case_id.clone()).collect();
                    write_labels(create(&out, "labels.csv")?, &ids, &two.labels)?;
                    write_json(
                        &out.join("simulate.json"),
                        &Output {
                            command: "simulate",
                            seed,
                            input_digest,
                            config_digest: json_digest(&two.modification),
                            result: &two.modification,
                        },
                    )?;
                }
            }
        }
        Command::Gpa { input, out } => {
            let blocks = load_blocks(std::slice::from_ref(&input))?;
            if blocks.len() != 1 {
                return Err(Error::InvalidConfig(format!(
                    "gpa aligns one block; the file holds {} objects",
                    blocks.len()
                )));
            }
            let pop = gpa(&blocks[0])?;
            fs::create_dir_all(&out)?;
            let aligned: Vec<LandmarkConfig> = blocks[0]
                .iter()
                .zip(&pop.preshapes)
                .map(|(c, p)| LandmarkConfig {
                    points: p.landmarks(),
                    ..c.clone()
                })
                .collect();
            write_landmarks_path(&out.join("aligned.csv"), &aligned)?;
            let mean = LandmarkConfig {
                points: pop.procrustes_mean.landmarks(),
                case_id: "mean".into(),
                object_label: blocks[0][0].object_label.clone(),
            };
            write_landmarks_path(&out.join("mean.csv"), &[mean])?;
            write_json(
                &out.join("gpa.json"),
                &Output {
                    command: "gpa",
                    seed,
                    input_digest: file_digest(&[&input])?,
                    config_digest: String::new(),
                    result: &pop,
                },
            )?;
        }
        Command::Pns {
            input,
            input_kind,
            force_great,
            out,
        } => {
            let blocks = load_blocks(std::slice::from_ref(&input))?;
            if blocks.len() != 1 {
                return Err(Error::InvalidConfig(format!(
                    "pns fits one block; the file holds {} objects",
                    blocks.len()
                )));
            }
            let points: Vec<UnitVector> = match input_kind {
                InputKind::Landmarks => blocks[0]
                    .iter()
                    .map(|c| Ok(to_preshape(c)?.to_unit_vector()))
                    .collect::<Result<_, Error>>()?,
                InputKind::Sphere => as_directions(&blocks)?.remove(0),
            };
            let opts = FitOptions { force_great };
            let model = pns_fit_with(&points, opts)?;
            fs::create_dir_all(&out)?;
            let ids: Vec<String> = blocks[0].iter().map(|c| c.case_id.clone()).collect();
            write_case_matrix(create(&out, "scores.csv")?, "pns", &ids, &model.training_scores())?;
            write_json(
                &out.join("pns.json"),
                &Output {
                    command: "pns",
                    seed,
                    input_digest: file_digest(&[&input])?,
                    config_digest: json_digest(&opts),
                    result: &model,
                },
            )?;
        }
        Command::Decompose {
            input,
            input_kind,
            config,
            out,
        } => {
            let cfg = load_config(config.as_ref())?;
            let blocks = load_blocks(&input)?;
            let res = run_neujive(&blocks, input_kind, &cfg, seed)?;
            fs::create_dir_all(&out)?;
            write_json(&out.join("decomposition.json"), &res)?;
            for (k, b) in res.blocks.iter().enumerate() {
                let parts = [
                    ("scores", &b.scores),
                    ("joint", &b.decomposition.joint),
                    ("individual", &b.decomposition.individual),
                    ("residual", &b.decomposition.residual),
                ];
                for (name, m) in parts {
                    write_case_matrix(create(&out, &format!("block{k}_{name}.csv"))?, "c", &res.case_ids, m)?;
                }
            }
            println!("joint rank {}", res.joint_rank());
        }
        Command::Diproperm {
            decomposition,
            labels,
            block,
            n_perm,
            out,
        } => {
            let res = read_decomposition(&decomposition)?;
            let labels_vec = read_case_labels(&labels, &res.case_ids)?;
            let scores = LabeledScores::new(stacked_joint(&res, block)?, labels_vec)?;
            let result = diproperm(&scores, n_perm, seed)?;
            fs::create_dir_all(&out)?;
            write_series(create(&out, "permutations.csv")?, ["permutation", "mean_difference"], &result.permutation_mds)?;
            write_json(
                &out.join("diproperm.json"),
                &Output {
                    command: "diproperm",
                    seed,
                    input_digest: file_digest(&[&decomposition, &labels])?,
                    config_digest: json_digest(&(n_perm, block)),
                    result: &result,
                },
            )?;
            println!("p = {} z = {:.3}", result.p_value, result.z_score);
        }
        Command::Classify {
            input,
            input_kind,
            labels,
            config,
            block,
            out,
        } => {
            let cfg = load_config(config.as_ref())?;
            let blocks = load_blocks(&input)?;
            let ids: Vec<String> = blocks[0].iter().map(|c| c.case_id.clone()).collect();
            let labels_vec = read_case_labels(&labels, &ids)?;
            let ncfg = cfg.neujive(seed);
            let points: Vec<Vec<UnitVector>> = match input_kind {
                InputKind::Landmarks => {
                    let res = neujive(&blocks, &ncfg)?;
                    res.blocks
                        .iter()
                        .map(|b| {
                            (0..res.n_cases())
                                .map(|j| {
                                    neujive::pns::pns_inverse(
                                        &b.pns,
                                        &b.scores
                                            .column(j)
                                            .iter()
                                            .zip(&b.score_means)
                                            .map(|(s, m)| s + m)
                                            .collect::<Vec<_>>(),
                                    )
                                })
                                .collect::<Result<Vec<_>, Error>>()
                        })
                        .collect::<Result<_, Error>>()?
                }
                InputKind::Sphere => as_directions(&blocks)?,
            };
            let mut pts_cfg = ncfg.clone();
            pts_cfg.align = false;
            let grid = if cfg.rank_grid.is_empty() {
                neujive_spherical(&points, &pts_cfg)?
                    .blocks
                    .iter()
                    .map(|b| b.initial_rank)
                    .max()
                    .into_iter()
                    .collect()
            } else {
                cfg.rank_grid.clone()
            };
            let source: Box<dyn FeatureSource> = match cfg.protocol {
                Protocol::Transductive => Box::new(PrecomputedFeatures::neujive(&points, &pts_cfg, block, &grid)?),
                Protocol::Strict => Box::new(StrictNeujiveFeatures {
                    blocks: points,
                    config: pts_cfg,
                    block,
                    rank_grid: grid,
                }),
            };
            let report = holdout_harness(source.as_ref(), &labels_vec, &cfg.holdout(seed))?;
            fs::create_dir_all(&out)?;
            write_series(create(&out, "aucs.csv")?, ["round", "auc"], &report.aucs)?;
            let mut paths: Vec<&Path> = input.iter().map(PathBuf::as_path).collect();
            paths.push(&labels);
            write_json(
                &out.join("holdout.json"),
                &Output {
                    command: "classify",
                    seed,
                    input_digest: file_digest(&paths)?,
                    config_digest: json_digest(&(&cfg, block)),
                    result: &report,
                },
            )?;
            println!(
                "mean auc {:.4} mean accuracy {:.4}",
                report.mean_auc, report.mean_accuracy
            );
        }
        Command::Reconstruct {
            decomposition,
            labels,
            restore_scale,
            out,
        } => {
            let res = read_decomposition(&decomposition)?;
            let labels_vec = read_case_labels(&labels, &res.case_ids)?;
            let map = group_difference_map(&res, &labels_vec, restore_scale)?;
            fs::create_dir_all(&out)?;
            let mut w = csv::Writer::from_writer(create(&out, "difference_map.csv")?);
            w.write_record(["block", "landmark", "distance"])?;
            for (b, dists) in res.blocks.iter().zip(&map) {
                for (i, d) in dists.iter().enumerate() {
                    w.write_record([b.block_id.clone(), i.to_string(), d.to_string()])?;
                }
            }
            w.flush()?;
            write_json(
                &out.join("reconstruct.json"),
                &Output {
                    command: "reconstruct",
                    seed,
                    input_digest: file_digest(&[&decomposition, &labels])?,
                    config_digest: json_digest(&restore_scale),
                    result: &map,
                },
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error[InvalidConfig]: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.name());
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
