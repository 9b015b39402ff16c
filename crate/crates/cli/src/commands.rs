use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};
use supportnet::config::{DataSource, ExperimentConfig, Method};
use supportnet::data::{load_idx, synthetic_blobs, ClassBatchSchedule, Dataset, Split};
use supportnet::engine::{data_rng, limit_per_class, run_observed, ExperimentLog, PreparedData};
use supportnet::Error;

use crate::output::{write_manifest, write_run_outputs, Checkpointer, Manifest};
use crate::Common;

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
    Other(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn from_run(e: Error) -> Self {
        match e {
            Error::Numerical(_) | Error::NonFinite(_) => Failure::Numerical(e.to_string()),
            Error::Config { .. } | Error::Parameter(_) => Failure::Usage(e.to_string()),
            Error::Schedule(_) | Error::Format(_) => Failure::Data(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Other(format!("{}: {e}", path.display()))
}

pub struct Loaded {
    pub config: ExperimentConfig,
    pub data: PreparedData,
    pub fingerprints: Vec<(String, String)>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn fingerprint_dataset(d: &Dataset) -> String {
    let mut h = Sha256::new();
    for v in d.features().data() {
        h.update(v.to_le_bytes());
    }
    for &l in d.labels() {
        h.update((l as u64).to_le_bytes());
    }
    hex(&h.finalize())
}

fn mnist_dir(config: &ExperimentConfig, common: &Common) -> PathBuf {
    match &config.data.source {
        DataSource::Mnist { dir: Some(d) } => d.clone(),
        _ => common.data_dir.clone().unwrap_or_else(|| PathBuf::from("data/mnist")),
    }
}

/// Parses the config, applies overrides and loads and prepares the data.
pub fn load(common: &Common) -> Result<Loaded, Failure> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Failure::Usage(format!("{}: {e}", common.config.display())))?;
    let mut config = ExperimentConfig::parse(&text)
        .map_err(|e| Failure::Usage(format!("{}: {e}", common.config.display())))?;
    if let Some(seed) = common.seed {
        config.method.seed = seed;
    }

    let (train, test, fingerprints) = match &config.data.source {
        DataSource::Mnist { .. } => {
            let dir = mnist_dir(&config, common);
            let path = |f: &str| dir.join(f);
            let data_err = |e: Error| Failure::Data(format!("MNIST data in {}: {e}", dir.display()));
            let train = load_idx(path(MNIST_FILES[0]), path(MNIST_FILES[1]), Split::Train).map_err(data_err)?;
            let test = load_idx(path(MNIST_FILES[2]), path(MNIST_FILES[3]), Split::Test).map_err(data_err)?;
            let mut prints = Vec::new();
            for f in MNIST_FILES {
                let bytes = std::fs::read(path(f)).map_err(|e| Failure::Data(format!("{f}: {e}")))?;
                prints.push((f.to_string(), hex(&Sha256::digest(&bytes))));
            }
            (train, test, prints)
        }
        &DataSource::Synthetic {
            classes,
            dim,
            train_per_class,
            test_per_class,
            separation,
        } => {
            let mut rng = data_rng(config.method.seed);
            let make = |n, split, rng: &mut _| synthetic_blobs(classes, dim, n, separation, rng, split);
            let train = make(train_per_class, Split::Train, &mut rng).map_err(|e| Failure::Usage(e.to_string()))?;
            let test = make(test_per_class, Split::Test, &mut rng).map_err(|e| Failure::Usage(e.to_string()))?;
            let prints = vec![
                ("synthetic_train".to_string(), fingerprint_dataset(&train)),
                ("synthetic_test".to_string(), fingerprint_dataset(&test)),
            ];
            (train, test, prints)
        }
    };
    let train = match config.data.max_train_per_class {
        Some(n) => limit_per_class(&train, n),
        None => train,
    };
    let schedule = match &config.data.schedule {
        Some(groups) => ClassBatchSchedule::new(groups.clone()),
        None => ClassBatchSchedule::pairs(train.num_classes()),
    }
    .map_err(|e| Failure::Usage(format!("schedule: {e}")))?;
    let data = PreparedData::new(&schedule, &train, &test).map_err(|e| Failure::Data(e.to_string()))?;
    Ok(Loaded {
        config,
        data,
        fingerprints,
    })
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

/// Runs one configured experiment into `dir` with the full output layout.
fn run_into(loaded: &Loaded, config: &ExperimentConfig, command: &str, dir: &Path) -> Result<ExperimentLog, Failure> {
    create_dir(dir)?;
    let manifest = Manifest::new(command, config, &loaded.fingerprints, &loaded.data);
    write_manifest(dir, &manifest)?;
    let mut checkpoints = Checkpointer::new(dir)?;
    let log = run_observed(&loaded.data, &config.model, &config.method, &mut |t, learner| {
        checkpoints.save(t, learner)
    })
    .map_err(Failure::from_run)?;
    write_run_outputs(dir, &log)?;
    Ok(log)
}

/// Runs `jobs` on up to `parallel` worker threads; results keep job order.
fn run_jobs<J: Sync, T: Send>(
    jobs: &[J],
    parallel: usize,
    f: impl Fn(&J) -> Result<T, Failure> + Sync,
) -> Result<Vec<T>, Failure> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T, Failure>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..parallel.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|r| r.unwrap_or_else(|| Err(Failure::Other("sub-run did not finish".into()))))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

pub fn run(common: &Common) -> Result<(), Failure> {
    let loaded = load(common)?;
    let log = run_into(&loaded, &loaded.config, "run", &common.out)?;
    if let Some(a) = log.final_accuracy() {
        println!("{}: final accuracy {a:.4}", log.method);
    }
    Ok(())
}

pub fn sweep_support(common: &Common, sizes: &[usize]) -> Result<(), Failure> {
    if sizes.is_empty() || sizes.contains(&0) || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Failure::Usage("--sizes must be positive and strictly ascending".into()));
    }
    let loaded = load(common)?;
    create_dir(&common.out)?;
    let mut jobs: Vec<(String, ExperimentConfig)> = sizes
        .iter()
        .map(|&b| {
            let mut c = loaded.config.clone();
            c.method.budget = b;
            (format!("budget_{b}"), c)
        })
        .collect();
    let mut reference = loaded.config.clone();
    reference.method.method = Method::AllData;
    jobs.push(("all_data".into(), reference));
    write_manifest(
        &common.out,
        &Manifest::sweep("sweep-support", &loaded, jobs.iter().map(|j| j.0.clone()).collect()),
    )?;

    let logs = run_jobs(&jobs, common.parallel, |(name, c)| {
        run_into(&loaded, c, "sweep-support", &common.out.join(name))
    })?;
    let reference = logs.last().and_then(ExperimentLog::final_accuracy).unwrap_or(f64::NAN);
    let mut csv = String::from("budget,final_accuracy,all_data_accuracy,deviation\n");
    for (b, log) in sizes.iter().zip(&logs) {
        let a = log.final_accuracy().unwrap_or(f64::NAN);
        csv.push_str(&format!("{b},{a},{reference},{}\n", reference - a));
    }
    write_text(&common.out.join("summary.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn sweep_ewc(common: &Common, coeffs: &[f64]) -> Result<(), Failure> {
    if coeffs.is_empty() || coeffs.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
        return Err(Failure::Usage("--coeffs must be a non-empty list of positive numbers".into()));
    }
    let loaded = load(common)?;
    create_dir(&common.out)?;
    let jobs: Vec<(String, ExperimentConfig)> = coeffs
        .iter()
        .map(|&c| {
            let mut cfg = loaded.config.clone();
            cfg.method.lambda_ewc = c;
            (format!("lambda_ewc_{c:?}"), cfg)
        })
        .collect();
    write_manifest(
        &common.out,
        &Manifest::sweep("sweep-ewc", &loaded, jobs.iter().map(|j| j.0.clone()).collect()),
    )?;
    let logs = run_jobs(&jobs, common.parallel, |(name, c)| {
        run_into(&loaded, c, "sweep-ewc", &common.out.join(name))
    })?;
    let mut csv = String::from("lambda_ewc,accuracy,kappa,macro_f1,macro_precision,macro_recall\n");
    for (c, log) in coeffs.iter().zip(&logs) {
        let Some(last) = log.increments.last() else { continue };
        let kappa = last.kappa.map_or(String::new(), |k| k.to_string());
        let m = &last.macro_scores;
        csv.push_str(&format!(
            "{c:?},{},{kappa},{},{},{}\n",
            last.accuracy, m.f1, m.precision, m.recall
        ));
    }
    write_text(&common.out.join("summary.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn compare(common: &Common) -> Result<(), Failure> {
    let loaded = load(common)?;
    let mut methods = loaded.config.method.methods.clone();
    methods.dedup();
    if methods.len() < 2 {
        return Err(Failure::Usage("compare needs at least two entries in `methods`".into()));
    }
    create_dir(&common.out)?;
    let jobs: Vec<(String, ExperimentConfig)> = methods
        .iter()
        .map(|&m| {
            let mut c = loaded.config.clone();
            c.method.method = m;
            (m.tag().to_string(), c)
        })
        .collect();
    write_manifest(
        &common.out,
        &Manifest::sweep("compare", &loaded, jobs.iter().map(|j| j.0.clone()).collect()),
    )?;
    let logs = run_jobs(&jobs, common.parallel, |(name, c)| {
        run_into(&loaded, c, "compare", &common.out.join(name))
    })?;

    let mut csv = String::from("increment,classes_seen");
    for m in &methods {
        csv.push(',');
        csv.push_str(m.tag());
    }
    csv.push('\n');
    for t in 0..loaded.data.schedule.len() {
        csv.push_str(&format!("{t},{}", loaded.data.schedule.classes_through(t)));
        for log in &logs {
            csv.push_str(&format!(",{}", log.increments[t].accuracy));
        }
        csv.push('\n');
    }
    write_text(&common.out.join("summary.csv"), &csv)?;
    for log in &logs {
        crate::output::write_accuracy_matrix(&common.out, log)?;
    }
    print!("{csv}");
    Ok(())
}
