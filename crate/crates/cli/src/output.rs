use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use supportnet::checkpoint::Checkpoint;
use supportnet::config::ExperimentConfig;
use supportnet::engine::{ExperimentLog, Learner, PreparedData};

use crate::commands::{Failure, Loaded};

#[derive(Serialize)]
struct Fingerprint {
    name: String,
    sha256: String,
}

#[derive(Serialize)]
pub struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    seed: u64,
    method: String,
    config_text: String,
    config: ExperimentConfig,
    datasets: Vec<Fingerprint>,
    class_order: Vec<usize>,
    schedule: Vec<Vec<usize>>,
    layout: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sub_runs: Option<Vec<String>>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig, prints: &[(String, String)], data: &PreparedData) -> Self {
        let method = config.method.method.tag();
        let increments = data.schedule.len();
        let mut layout = vec![
            "manifest.json".to_string(),
            "experiment_log.json".into(),
            "metrics.csv".into(),
            format!("accuracy_matrix_{method}.csv"),
        ];
        for t in 0..increments {
            layout.push(format!("confusion_{t}.csv"));
            layout.push(format!("support_{t}.csv"));
            layout.push(format!("checkpoints/increment_{t}.ckpt"));
        }
        Self {
            tool: "supportnet",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed: config.method.seed,
            method: method.to_string(),
            config_text: config.to_config_string(),
            config: config.clone(),
            datasets: prints
                .iter()
                .map(|(n, h)| Fingerprint {
                    name: n.clone(),
                    sha256: h.clone(),
                })
                .collect(),
            class_order: data.class_order.clone(),
            schedule: data
                .schedule
                .groups()
                .iter()
                .map(|g| g.iter().map(|&p| data.class_order[p]).collect())
                .collect(),
            layout,
            sub_runs: None,
        }
    }

    pub fn sweep(command: &str, loaded: &Loaded, sub_runs: Vec<String>) -> Self {
        let mut m = Self::new(command, &loaded.config, &loaded.fingerprints, &loaded.data);
        m.layout = vec!["manifest.json".into(), "summary.csv".into()];
        m.layout.extend(sub_runs.iter().map(|s| format!("{s}/")));
        m.sub_runs = Some(sub_runs);
        m
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

fn wrap(path: &Path) -> impl Fn(supportnet::Error) -> Failure + '_ {
    move |e| Failure::Other(format!("{}: {e}", path.display()))
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), Failure> {
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| Failure::Other(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

pub struct Checkpointer {
    dir: PathBuf,
}

impl Checkpointer {
    pub fn new(run_dir: &Path) -> Result<Self, Failure> {
        let dir = run_dir.join("checkpoints");
        std::fs::create_dir_all(&dir).map_err(|e| Failure::Other(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn save(&mut self, increment: usize, learner: &Learner) -> supportnet::Result<()> {
        Checkpoint {
            increment: increment as u32,
            params: learner.params.clone(),
            state: learner.state.clone(),
        }
        .save(self.dir.join(format!("increment_{increment}.ckpt")))
    }
}

pub fn write_accuracy_matrix(dir: &Path, log: &ExperimentLog) -> Result<(), Failure> {
    let path = dir.join(format!("accuracy_matrix_{}.csv", log.method));
    log.accuracy_matrix.write_csv(create(&path)?).map_err(wrap(&path))
}

pub fn write_run_outputs(dir: &Path, log: &ExperimentLog) -> Result<(), Failure> {
    let path = dir.join("experiment_log.json");
    log.write_json(create(&path)?).map_err(wrap(&path))?;
    let path = dir.join("metrics.csv");
    log.write_csv(create(&path)?).map_err(wrap(&path))?;
    write_accuracy_matrix(dir, log)?;
    for r in &log.increments {
        let path = dir.join(format!("confusion_{}.csv", r.increment));
        r.confusion.write_csv(create(&path)?).map_err(wrap(&path))?;
        let path = dir.join(format!("support_{}.csv", r.increment));
        let mut w = create(&path)?;
        supportnet::selector::write_support_csv(&r.support_audit, &mut w).map_err(wrap(&path))?;
    }
    Ok(())
}
