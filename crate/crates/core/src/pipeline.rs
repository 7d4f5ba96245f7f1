//! Run directories and the pipeline stages behind the CLI.
//!
//! ```text
//! <out>/<run_id>/config.txt                 resolved configuration
//! <out>/<run_id>/data/                      dataset (manifest.txt, samples/)
//! <out>/<run_id>/models/enhancer.evnp
//! <out>/<run_id>/models/fusion-<kind>.evnp  (+ .history.txt, .loss.png)
//! <out>/<run_id>/models/depth-<kind>.evnp   (+ .history.txt, .loss.png)
//! <out>/<run_id>/models/crossval/...
//! <out>/<run_id>/reports/<seq>-<command>/   config, artifacts, metrics, table, plots
//! ```
//!
//! A stage whose output already exists is reused, never rewritten. Stages
//! that need upstream outputs fail with [`Error::MissingArtifact`] naming the
//! command to run first.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::depth::{train_depth, DepthNet, InputKind};
use crate::enhance::{train_enhancer, Enhancer, EnhancerKind};
use crate::error::{Error, Result};
use crate::evaluate::{
    format_crossval_table, format_records, format_table, sobel_image, CrossValResult, CrossValSplit,
    MetricsAccumulator, MetricsReport, FOLD_A, FOLD_B,
};
use crate::events::event_frame_to_input;
use crate::fusion::{
    export_fusion_images, fusion_extra_key, fusion_file_name, fusion_image, train_fusion, FusionNet, FusionPair,
};
use crate::io::{load_png, read_file, write_atomic};
use crate::nn::{ParamFile, Params};
use crate::parallel::map_indexed;
use crate::plot;
use crate::synthcam::dataset::{
    generate_dataset, load_sample, DatasetManifest, Sample, SampleRecord, Split, MANIFEST_FILE,
};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArtifactStatus {
    Created,
    Reused,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub path: PathBuf,
    pub status: ArtifactStatus,
}

/// One run directory plus the artifact log of the current invocation.
pub struct Run {
    pub config: RunConfig,
    pub dir: PathBuf,
    pub artifacts: Vec<Artifact>,
    /// Loss histories produced during this invocation, by model name.
    pub histories: Vec<(String, Vec<f64>)>,
}

fn missing(stage: &str, path: PathBuf) -> Error {
    Error::MissingArtifact {
        stage: stage.to_string(),
        path,
    }
}

fn format_history(h: &[f64]) -> String {
    h.iter().map(|v| format!("{v}\n")).collect()
}

pub fn parse_history(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::InvalidData(format!("bad history line {l:?}")))
        })
        .collect()
}

fn take_first(records: Vec<&SampleRecord>, limit: usize) -> Vec<&SampleRecord> {
    if limit == 0 {
        records
    } else {
        records.into_iter().take(limit).collect()
    }
}

impl Run {
    /// Opens (or creates) `<out>/<run_id>/` and records the resolved configuration.
    pub fn open(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let dir = config.out.join(config.run_id());
        fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let cfg_path = dir.join("config.txt");
        let text = config.to_text();
        if cfg_path.exists() {
            let existing = fs::read_to_string(&cfg_path).map_err(|e| Error::io("reading run config", e))?;
            if existing != text {
                return Err(Error::Config(format!(
                    "{} holds a different configuration; refusing to reuse it",
                    dir.display()
                )));
            }
        } else {
            write_atomic(&cfg_path, text.as_bytes())?;
        }
        Ok(Run {
            config,
            dir,
            artifacts: Vec::new(),
            histories: Vec::new(),
        })
    }

    pub fn data_dir(&self) -> PathBuf {
        self.dir.join("data")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.dir.join("models")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.dir.join("reports")
    }

    pub fn enhancer_path(&self) -> PathBuf {
        self.models_dir().join("enhancer.evnp")
    }

    pub fn fusion_path(&self, kind: InputKind) -> PathBuf {
        self.models_dir().join(format!("fusion-{}.evnp", kind.tag()))
    }

    pub fn depth_path(&self, kind: InputKind) -> PathBuf {
        self.models_dir().join(format!("depth-{}.evnp", kind.tag()))
    }

    fn note(&mut self, path: &Path, status: ArtifactStatus) {
        let rel = path.strip_prefix(&self.dir).unwrap_or(path).to_path_buf();
        log::info!(
            "{} {}",
            if status == ArtifactStatus::Created {
                "wrote"
            } else {
                "reused"
            },
            rel.display()
        );
        self.artifacts.push(Artifact { path: rel, status });
    }

    /// Saves parameters together with their loss history and curve.
    fn save_model(&mut self, path: &Path, params: &ParamFile, history: &[f64]) -> Result<()> {
        params.save(path)?;
        self.note(path, ArtifactStatus::Created);
        let hist_path = path.with_extension("history.txt");
        write_atomic(&hist_path, format_history(history).as_bytes())?;
        self.note(&hist_path, ArtifactStatus::Created);
        let plot_path = path.with_extension("loss.png");
        write_atomic(&plot_path, &plot::encode(&plot::line_plot(&[history], 320, 200))?)?;
        self.note(&plot_path, ArtifactStatus::Created);
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
        self.histories.push((name, history.to_vec()));
        Ok(())
    }

    // ---- dataset ----

    pub fn gen_data(&mut self) -> Result<DatasetManifest> {
        let root = self.data_dir();
        let path = root.join(MANIFEST_FILE);
        if path.exists() {
            let m = DatasetManifest::load(&root)?;
            self.note(&path, ArtifactStatus::Reused);
            return Ok(m);
        }
        let cfg = self.config.dataset().map_err(|e| Error::Config(e.to_string()))?;
        log::info!("generating {} samples", cfg.samples);
        let m = generate_dataset(&cfg, &root)?;
        self.note(&root.join("samples"), ArtifactStatus::Created);
        self.note(&path, ArtifactStatus::Created);
        Ok(m)
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        DatasetManifest::load(&self.data_dir())
    }

    fn load_samples(&self, manifest: &DatasetManifest, records: &[&SampleRecord]) -> Result<Vec<Sample>> {
        let root = self.data_dir();
        map_indexed(records.len(), |i| load_sample(&root, manifest, records[i]))
            .into_iter()
            .collect()
    }

    // ---- enhancer ----

    pub fn train_enhance(&mut self) -> Result<Enhancer> {
        let path = self.enhancer_path();
        if path.exists() {
            let e = self.enhancer()?;
            self.note(&path, ArtifactStatus::Reused);
            return Ok(e);
        }
        let manifest = self.manifest()?;
        let cfg = self.config.enhancer()?;
        let enhancer = match cfg.kind {
            EnhancerKind::Analytic => {
                let e = Enhancer::analytic(cfg.gamma_target);
                e.to_param_file().save(&path)?;
                self.note(&path, ArtifactStatus::Created);
                e
            }
            EnhancerKind::AttentionUnet => {
                let limit = self.config.train_samples("enhancer")?;
                let records = take_first(manifest.split(Split::Train), limit);
                let samples = self.load_samples(&manifest, &records)?;
                let pairs: Vec<(Tensor, Tensor)> = samples.into_iter().map(|s| (s.rgb, s.clean)).collect();
                log::info!("training enhancer on {} samples", pairs.len());
                let (net, history) = train_enhancer(&pairs, &cfg, &self.config.enhancer_train()?)?;
                self.save_model(&path, &net.to_param_file(), &history)?;
                Enhancer::Trained(net)
            }
        };
        Ok(enhancer)
    }

    pub fn enhancer(&self) -> Result<Enhancer> {
        let path = self.enhancer_path();
        if !path.exists() {
            return Err(missing("train-enhance", path));
        }
        Enhancer::from_param_file(&self.config.enhancer()?, &ParamFile::load(&path)?)
    }

    fn enhancer_for(&self, kind: InputKind) -> Result<Option<Enhancer>> {
        if kind.needs_enhancer() {
            Ok(Some(self.enhancer()?))
        } else {
            Ok(None)
        }
    }

    // ---- fusion ----

    pub fn train_fusion(&mut self, kind: InputKind) -> Result<()> {
        if !kind.is_fused() {
            return Ok(());
        }
        let path = self.fusion_path(kind);
        if path.exists() {
            self.note(&path, ArtifactStatus::Reused);
            return Ok(());
        }
        let manifest = self.manifest()?;
        let enhancer = self.enhancer_for(kind)?;
        let limit = self.config.train_samples("fusion")?;
        let records = take_first(manifest.split(Split::Train), limit);
        let (net, history) = self.fit_fusion(kind, &manifest, &records, enhancer.as_ref(), "")?;
        self.save_model(&path, &net.to_param_file(), &history)
    }

    fn fit_fusion(
        &self,
        kind: InputKind,
        manifest: &DatasetManifest,
        records: &[&SampleRecord],
        enhancer: Option<&Enhancer>,
        seed_suffix: &str,
    ) -> Result<(FusionNet<f32>, Vec<f64>)> {
        let samples = self.load_samples(manifest, records)?;
        let pairs = samples
            .iter()
            .map(|s| fusion_pair(kind, s, enhancer))
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = self.config.fusion(kind)?;
        if !seed_suffix.is_empty() {
            cfg.train.seed = crate::seed::derive_seed(cfg.train.seed, seed_suffix);
        }
        log::info!("training {kind} fusion on {} samples", pairs.len());
        train_fusion(&pairs, &cfg)
    }

    pub fn fusion_net(&self, kind: InputKind) -> Result<FusionNet<f32>> {
        let path = self.fusion_path(kind);
        if !path.exists() {
            return Err(missing("train-fusion", path));
        }
        let cfg = self.config.fusion(kind)?;
        let mut net = FusionNet::new(cfg.channels, cfg.compact_dim);
        net.load_param_file(&ParamFile::load(&path)?)?;
        Ok(net)
    }

    pub fn export_fusion(&mut self, kind: InputKind) -> Result<()> {
        if !kind.is_fused() {
            return Ok(());
        }
        let root = self.data_dir();
        let mut manifest = self.manifest()?;
        let key = fusion_extra_key(kind.tag());
        let file = fusion_file_name(kind.tag());
        let done = manifest
            .records
            .iter()
            .all(|r| r.extras.contains_key(&key) && DatasetManifest::sample_dir(&root, &r.id).join(&file).exists());
        if done {
            self.note(&root.join("samples").join(format!("*/{file}")), ArtifactStatus::Reused);
            return Ok(());
        }
        let net = self.fusion_net(kind)?;
        let enhancer = self.enhancer_for(kind)?;
        let snapshot = manifest.clone();
        let n = export_fusion_images(&net, &root, &mut manifest, kind.tag(), |r| {
            let s = load_sample(&root, &snapshot, r)?;
            fusion_pair(kind, &s, enhancer.as_ref())
        })?;
        manifest.save(&root)?;
        log::info!("exported {n} {kind} fusion images");
        self.note(&root.join("samples").join(format!("*/{file}")), ArtifactStatus::Created);
        self.note(&root.join(MANIFEST_FILE), ArtifactStatus::Created);
        Ok(())
    }

    // ---- depth ----

    fn depth_inputs(
        &self,
        kind: InputKind,
        manifest: &DatasetManifest,
        records: &[&SampleRecord],
        fused: Option<&FusionNet<f32>>,
    ) -> Result<Vec<(Tensor, Tensor)>> {
        let root = self.data_dir();
        let enhancer = self.enhancer_for(kind)?;
        let enhancer = enhancer.as_ref();
        map_indexed(records.len(), |i| {
            let r = records[i];
            let s = load_sample(&root, manifest, r)?;
            let input = match (kind.is_fused(), fused) {
                (true, Some(net)) => fusion_image(net, &fusion_pair(kind, &s, enhancer)?)?,
                (true, None) => {
                    let path = DatasetManifest::sample_dir(&root, &r.id).join(fusion_file_name(kind.tag()));
                    if !path.exists() {
                        return Err(missing("export-fusion", path));
                    }
                    load_png(&path)?
                }
                (false, _) => plain_input(kind, &s, enhancer)?,
            };
            Ok((input, s.depth_gt))
        })
        .into_iter()
        .collect()
    }

    pub fn train_depth(&mut self, kind: InputKind) -> Result<()> {
        let path = self.depth_path(kind);
        if path.exists() {
            self.note(&path, ArtifactStatus::Reused);
            return Ok(());
        }
        let manifest = self.manifest()?;
        let limit = self.config.train_samples("depth")?;
        let records = take_first(manifest.split(Split::Train), limit);
        let data = self.depth_inputs(kind, &manifest, &records, None)?;
        let val = self.depth_inputs(kind, &manifest, &manifest.split(Split::Val), None)?;
        log::info!("training {kind} depth on {} samples", data.len());
        let (net, history, scores) = train_depth(&data, &val, &self.config.depth(kind)?)?;
        self.save_model(&path, &net.to_param_file(), &history)?;
        self.save_val_scores(&path, &scores)
    }

    fn save_val_scores(&mut self, model_path: &Path, scores: &[f64]) -> Result<()> {
        if scores.is_empty() {
            return Ok(());
        }
        let path = model_path.with_extension("val.txt");
        write_atomic(&path, format_history(scores).as_bytes())?;
        self.note(&path, ArtifactStatus::Created);
        Ok(())
    }

    pub fn depth_net(&self, kind: InputKind) -> Result<DepthNet<f32>> {
        let path = self.depth_path(kind);
        if !path.exists() {
            return Err(missing("train-depth", path));
        }
        load_depth_net(&self.config, kind, &path)
    }

    fn score(&self, net: &DepthNet<f32>, data: &[(Tensor, Tensor)]) -> Result<MetricsReport> {
        let range = self.config.depth_range()?;
        let parts = map_indexed(data.len(), |i| -> Result<MetricsAccumulator> {
            let pred = net.predict(&data[i].0)?;
            let mut acc = MetricsAccumulator::default();
            acc.add_map(&pred, &data[i].1, range)?;
            Ok(acc)
        });
        let mut total = MetricsAccumulator::default();
        for p in parts {
            total.merge(&p?);
        }
        total.finish()
    }

    /// Test-split metrics of one trained input kind.
    pub fn evaluate_kind(&self, kind: InputKind) -> Result<MetricsReport> {
        let net = self.depth_net(kind)?;
        let manifest = self.manifest()?;
        let records = manifest.split(Split::Test);
        let data = self.depth_inputs(kind, &manifest, &records, None)?;
        self.score(&net, &data)
    }

    pub fn evaluate(&self, kinds: &[InputKind]) -> Result<Vec<(String, MetricsReport)>> {
        kinds
            .iter()
            .map(|&k| Ok((k.name().to_string(), self.evaluate_kind(k)?)))
            .collect()
    }

    /// Trains and scores every one of the seven input kinds.
    pub fn baselines(&mut self) -> Result<Vec<(String, MetricsReport)>> {
        self.manifest()?;
        self.enhancer()?;
        for kind in InputKind::ALL {
            self.train_fusion(kind)?;
            self.export_fusion(kind)?;
            self.train_depth(kind)?;
        }
        self.evaluate(&InputKind::ALL)
    }

    // ---- weather cross-validation ----

    pub fn crossval(&mut self) -> Result<Vec<CrossValResult>> {
        let manifest = self.manifest()?;
        let enhancer = self.enhancer()?;
        let split = CrossValSplit::from_manifest(&manifest)?;
        let dir = self.models_dir().join("crossval");
        let by_id = |ids: &[String]| -> Vec<&SampleRecord> {
            manifest.records.iter().filter(|r| ids.contains(&r.id)).collect()
        };
        let fold_a = by_id(&split.fold_a);
        let fold_b = by_id(&split.fold_b);
        let mut results = Vec::new();
        for (train_name, train, test_name, test, tag) in [
            (FOLD_A, &fold_a, FOLD_B, &fold_b, "single"),
            (FOLD_B, &fold_b, FOLD_A, &fold_a, "mixed"),
        ] {
            let kind = InputKind::Even;
            let fusion_path = dir.join(format!("fusion-{tag}.evnp"));
            let fusion = if fusion_path.exists() {
                self.note(&fusion_path, ArtifactStatus::Reused);
                let cfg = self.config.fusion(kind)?;
                let mut net = FusionNet::new(cfg.channels, cfg.compact_dim);
                net.load_param_file(&ParamFile::load(&fusion_path)?)?;
                net
            } else {
                let limit = self.config.train_samples("fusion")?;
                let recs = take_first(train.clone(), limit);
                let (net, history) = self.fit_fusion(kind, &manifest, &recs, Some(&enhancer), tag)?;
                self.save_model(&fusion_path, &net.to_param_file(), &history)?;
                net
            };
            let depth_path = dir.join(format!("depth-{tag}.evnp"));
            let depth = if depth_path.exists() {
                self.note(&depth_path, ArtifactStatus::Reused);
                load_depth_net(&self.config, kind, &depth_path)?
            } else {
                let limit = self.config.train_samples("depth")?;
                let (val, rest): (Vec<&SampleRecord>, Vec<&SampleRecord>) =
                    train.iter().copied().partition(|r| r.split == Split::Val);
                let recs = take_first(rest, limit);
                let data = self.depth_inputs(kind, &manifest, &recs, Some(&fusion))?;
                let val = self.depth_inputs(kind, &manifest, &val, Some(&fusion))?;
                let mut cfg = self.config.depth(kind)?;
                cfg.train.seed = crate::seed::derive_seed(cfg.train.seed, tag);
                log::info!("training crossval depth ({train_name}) on {} samples", data.len());
                let (net, history, scores) = train_depth(&data, &val, &cfg)?;
                self.save_model(&depth_path, &net.to_param_file(), &history)?;
                self.save_val_scores(&depth_path, &scores)?;
                net
            };
            let data = self.depth_inputs(kind, &manifest, test, Some(&fusion))?;
            results.push(CrossValResult {
                train_fold: train_name.to_string(),
                test_fold: test_name.to_string(),
                report: self.score(&depth, &data)?,
            });
        }
        Ok(results)
    }

    // ---- reports ----

    /// Writes `reports/<seq>-<command>/` and returns its path.
    pub fn write_report(
        &self,
        command: &str,
        rows: &[(String, MetricsReport)],
        crossval: &[CrossValResult],
    ) -> Result<PathBuf> {
        let reports = self.reports_dir();
        fs::create_dir_all(&reports).map_err(|e| Error::io("creating reports dir", e))?;
        let seq = fs::read_dir(&reports)
            .map_err(|e| Error::io("listing reports", e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .count()
            + 1;
        let dir = reports.join(format!("{seq:03}-{command}"));
        write_atomic(&dir.join("config.txt"), self.config.to_text().as_bytes())?;
        let mut list = String::new();
        for a in &self.artifacts {
            let status = match a.status {
                ArtifactStatus::Created => "created",
                ArtifactStatus::Reused => "reused",
            };
            let _ = writeln!(list, "{status} {}", a.path.display());
        }
        write_atomic(&dir.join("artifacts.txt"), list.as_bytes())?;
        let mut all_rows: Vec<(String, MetricsReport)> = rows.to_vec();
        all_rows.extend(
            crossval
                .iter()
                .map(|r| (format!("{}->{}", r.train_fold, r.test_fold), r.report)),
        );
        if !all_rows.is_empty() {
            write_atomic(&dir.join("metrics.txt"), format_records(&all_rows).as_bytes())?;
            let mut table = String::new();
            if !rows.is_empty() {
                table.push_str(&format_table(rows));
            }
            if !crossval.is_empty() {
                if !table.is_empty() {
                    table.push('\n');
                }
                table.push_str(&format_crossval_table(crossval));
            }
            write_atomic(&dir.join("table.txt"), table.as_bytes())?;
            let abs: Vec<f64> = all_rows.iter().map(|(_, r)| r.abs_rel).collect();
            write_atomic(
                &dir.join("abs_rel.png"),
                &plot::encode(&plot::bar_plot(&abs, 320, 200))?,
            )?;
        }
        if !self.histories.is_empty() {
            let series: Vec<&[f64]> = self.histories.iter().map(|(_, h)| h.as_slice()).collect();
            write_atomic(
                &dir.join("losses.png"),
                &plot::encode(&plot::line_plot(&series, 320, 200))?,
            )?;
        }
        Ok(dir)
    }
}

fn load_depth_net(config: &RunConfig, kind: InputKind, path: &Path) -> Result<DepthNet<f32>> {
    let mut net = DepthNet::from_config(&config.depth(kind)?)?;
    net.load_param_file(&ParamFile::load(path)?)?;
    Ok(net)
}

fn need_enhancer(e: Option<&Enhancer>) -> Result<&Enhancer> {
    e.ok_or_else(|| Error::InvalidArgument("this input kind needs an enhancer".into()))
}

/// Depth-network input for the kinds that do not go through a fusion network.
pub fn plain_input(kind: InputKind, s: &Sample, enhancer: Option<&Enhancer>) -> Result<Tensor> {
    match kind {
        InputKind::Rgb => Ok(s.rgb.clone()),
        InputKind::Event => event_frame_to_input(&s.event_frame, 3),
        InputKind::Enhanced => need_enhancer(enhancer)?.enhance(&s.rgb),
        k => Err(Error::InvalidArgument(format!("{k} is produced by a fusion network"))),
    }
}

/// Branch inputs of a fused kind: auxiliary image (event branch) and primary image (RGB branch).
pub fn fusion_pair(kind: InputKind, s: &Sample, enhancer: Option<&Enhancer>) -> Result<FusionPair> {
    let events = || event_frame_to_input(&s.event_frame, 3);
    match kind {
        InputKind::RgbSobel => Ok(FusionPair {
            event: sobel_image(&s.rgb),
            enhanced: s.rgb.clone(),
        }),
        InputKind::RgbEvent => Ok(FusionPair {
            event: events()?,
            enhanced: s.rgb.clone(),
        }),
        InputKind::EnhancedSobel => {
            let enh = need_enhancer(enhancer)?.enhance(&s.rgb)?;
            Ok(FusionPair {
                event: sobel_image(&enh),
                enhanced: enh,
            })
        }
        InputKind::Even => Ok(FusionPair {
            event: events()?,
            enhanced: need_enhancer(enhancer)?.enhance(&s.rgb)?,
        }),
        k => Err(Error::InvalidArgument(format!("{k} does not use a fusion network"))),
    }
}

/// Reads a history file written next to a model.
pub fn load_history(model_path: &Path) -> Result<Vec<f64>> {
    let bytes = read_file(&model_path.with_extension("history.txt"))?;
    parse_history(&String::from_utf8_lossy(&bytes))
}
