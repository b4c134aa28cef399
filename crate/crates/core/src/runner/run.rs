use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{NfrError, Result};
use crate::kis::{kis_report, KisVariant};
use crate::lab::{
    activation_split_attrib, alignment, curve_over, full_depths, orthogonality_stats, sanity_experiment,
    theorem1_experiment, theorem2_experiment, ClassMode, CurveRule, Perturbation, SplitSide,
};
use crate::net::data::{synthetic_bars, synthetic_blobs};
use crate::net::{build_random_mlp, build_random_network, forward, train_sgd, LabeledDataset, Network};
use crate::rules::{attribute_traced, nfr_check, RuleKind, RuleSpec};
use crate::sampling::{derive_seed, standard_normal, DistKind, DistSpec, RNG_NAME};
use crate::tensor::{Shape, Tensor};

use super::config::{DataConfig, DistConfig, ModelConfig, RunConfig, Subcommand};
use super::image::{display_shape, render_saliency};

const MODEL_STREAM: u64 = 0x4D4F_4445;
const DATA_STREAM: u64 = 0x4441_5441;
const TRAIN_STREAM: u64 = 0x5452_4149;
const EXPERIMENT_STREAM: u64 = 0x4558_5052;

/// What a run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    /// Output files relative to the output directory, in write order.
    pub files: Vec<String>,
    /// Samples that failed and were recorded instead of aborting the run.
    pub sample_errors: usize,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    seed: u64,
    files: Vec<String>,
    seeds: BTreeMap<String, u64>,
    summary: BTreeMap<String, Value>,
    sample_errors: usize,
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn missing(field: &str, sub: Subcommand) -> NfrError {
    NfrError::config(field, format!("required by {}", sub.name()))
}

fn file_stem(rule: &RuleSpec, j: usize) -> String {
    format!("r{j}_{}", rule.name())
}

impl<'a> Run<'a> {
    fn derive(&mut self, name: &str, stream: u64, index: u64) -> u64 {
        let s = derive_seed(self.seed, stream, index);
        self.seeds.insert(name.to_string(), s);
        s
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.out.join(name))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn dist(&self, d: &DistConfig, seed: u64) -> Result<DistSpec> {
        DistSpec::new(d.kind, d.scale, seed)
    }

    fn model(&mut self, sub: Subcommand, index: u64) -> Result<Network> {
        let seed = self.derive(&format!("model[{index}]"), MODEL_STREAM, index);
        let net = match self.cfg.model.as_ref().ok_or_else(|| missing("model", sub))? {
            ModelConfig::Path(p) => Network::load(p)
                .map_err(|e| NfrError::config("model.path", format!("cannot load {}: {e}", p.display())))?,
            ModelConfig::Mlp { dims, dist } => build_random_mlp(dims, &self.dist(dist, seed)?)
                .map_err(|e| NfrError::config("model.mlp", e.to_string()))?,
            ModelConfig::Layers { input_shape, layers, dist } => {
                build_random_network(Shape::new(input_shape.clone())?, layers, &self.dist(dist, seed)?)
                    .map_err(|e| NfrError::config("model.layers", e.to_string()))?
            }
        };
        match &self.cfg.train {
            None => Ok(net),
            Some(train) => {
                let data_cfg = self.cfg.train_data.as_ref().or(self.cfg.data.as_ref()).ok_or_else(|| missing("train_data", sub))?;
                let data = self.dataset(data_cfg, &net, "train_data", 1)?;
                let mut train = *train;
                train.seed = self.derive(&format!("train[{index}]"), TRAIN_STREAM, index ^ train.seed.rotate_left(17));
                train_sgd(&net, &data, &train)
            }
        }
    }

    fn dataset(&mut self, data: &DataConfig, net: &Network, field: &str, index: u64) -> Result<LabeledDataset> {
        let seed = self.derive(&format!("{field}[{index}]"), DATA_STREAM, index);
        let classes = net.class_count();
        let set = match data {
            DataConfig::Dir { path, class_count } => LabeledDataset::load_dir(path, class_count.or(Some(classes)))
                .map_err(|e| NfrError::config(field, format!("cannot load {}: {e}", path.display())))?,
            DataConfig::Files(paths) => {
                let inputs = paths
                    .iter()
                    .map(|p| Tensor::load(p).map_err(|e| NfrError::config(field, format!("cannot load {}: {e}", p.display()))))
                    .collect::<Result<Vec<_>>>()?;
                let labels = vec![0; inputs.len()];
                LabeledDataset::new(inputs, labels, classes)?
            }
            DataConfig::Bars { count, side, noise } => synthetic_bars(*count, *side, *noise, seed)?,
            DataConfig::Blobs { count, dim, separation } => synthetic_blobs(*count, *dim, *separation, seed)?,
            DataConfig::Gaussian { count } => {
                let inputs: Vec<Tensor> = (0..*count as u64)
                    .map(|i| standard_normal(net.input_shape(), derive_seed(seed, 0, i)))
                    .collect();
                LabeledDataset::new(inputs, vec![0; *count], classes)?
            }
        };
        let set = if set.class_count() < classes {
            LabeledDataset::new(set.inputs().to_vec(), set.labels().to_vec(), classes)?
        } else {
            set
        };
        match set.inputs().first() {
            Some(x) if x.shape() != net.input_shape() => set
                .reshaped(net.input_shape())
                .map_err(|e| NfrError::config(field, format!("inputs do not fit the model: {e}"))),
            _ => Ok(set),
        }
    }

    fn data(&mut self, sub: Subcommand, net: &Network, index: u64) -> Result<LabeledDataset> {
        let cfg = self.cfg.data.as_ref().ok_or_else(|| missing("data", sub))?;
        self.dataset(cfg, net, "data", index)
    }

    fn rules(&self, default: &[RuleSpec]) -> Result<Vec<RuleSpec>> {
        let rules = if self.cfg.rules.is_empty() { default.to_vec() } else { self.cfg.rules.clone() };
        for (j, r) in rules.iter().enumerate() {
            r.validate().map_err(|e| NfrError::config(format!("rules[{j}]"), e.to_string()))?;
        }
        Ok(rules)
    }

    fn class(&self, net: &Network, predicted: usize) -> Result<usize> {
        match self.cfg.class {
            Some(k) if k >= net.class_count() => Err(NfrError::config("class", format!("class {k} out of range"))),
            Some(k) => Ok(k),
            None => Ok(predicted),
        }
    }

    fn curve_rules(&self, default: &[RuleSpec]) -> Result<Vec<CurveRule>> {
        let mut rules: Vec<CurveRule> = self.rules(default)?.into_iter().map(CurveRule::Rule).collect();
        if self.cfg.activation {
            rules.push(CurveRule::Activation);
        }
        Ok(rules)
    }

    fn attribute(&mut self) -> Result<()> {
        let sub = Subcommand::Attribute;
        let net = self.model(sub, 0)?;
        let data = self.data(sub, &net, 0)?;
        let rules = self.rules(&[RuleSpec::new(RuleKind::Gbp)])?;
        let mut rows = Vec::new();
        for (i, x) in data.inputs().iter().enumerate() {
            let trace = forward(&net, x)?;
            let k = self.class(&net, trace.predicted_class())?;
            for (j, rule) in rules.iter().enumerate() {
                let att = attribute_traced(&net, &trace, rule, k)?;
                let stem = format!("attr_s{i:04}_{}", file_stem(rule, j));
                att.values.save(self.out.join(format!("{stem}.nfrt")))?;
                self.files.push(format!("{stem}.nfrt"));
                let shown = att.values.reshape(display_shape(&att.values)?)?;
                let ext = if shown.dims().first() == Some(&3) && shown.shape().rank() == 3 { "ppm" } else { "pgm" };
                render_saliency(&shown, self.out.join(format!("{stem}.{ext}")))?;
                self.files.push(format!("{stem}.{ext}"));
                let a = alignment(&att.values, x).ok().map(|a| a.value);
                rows.push(vec![i.to_string(), rule.label(), k.to_string(), opt_num(a), num(att.dropped)]);
            }
        }
        self.table("attribute.csv", &["sample", "rule", "class", "alignment", "dropped"], &rows)
    }

    fn cascade(&mut self) -> Result<()> {
        let sub = Subcommand::Cascade;
        let count = self.cfg.nets.unwrap_or(1);
        if count == 0 {
            return Err(NfrError::config("nets", "must be positive"));
        }
        if count > 1 && matches!(self.cfg.model, Some(ModelConfig::Path(_))) {
            return Err(NfrError::config("nets", "several nets need a generated model"));
        }
        let mut nets = Vec::with_capacity(count);
        let mut sets = Vec::with_capacity(count);
        for i in 0..count as u64 {
            let net = self.model(sub, i)?;
            sets.push(self.data(sub, &net, i)?);
            nets.push(net);
        }
        let pairs: Vec<(&Network, &Tensor)> =
            nets.iter().zip(&sets).flat_map(|(n, s)| s.inputs().iter().map(move |x| (n, x))).collect();
        let k_mode = self.cfg.class.map(ClassMode::Fixed).unwrap_or(ClassMode::Predicted);
        let mut rows = Vec::new();
        for rule in self.curve_rules(&[RuleSpec::new(RuleKind::Gbp)])? {
            let depths = self.cfg.depths.clone().unwrap_or_else(|| full_depths(&nets[0], &rule));
            let curve = curve_over(&pairs, &rule, k_mode, &depths, self.cfg.with_bottom)?;
            self.summary.insert(format!("{}_terminal_mean", curve.label), json!(curve.last().mean));
            for p in &curve.points {
                rows.push(vec![curve.label.clone(), p.depth.to_string(), num(p.mean), num(p.std), p.trials.to_string()]);
            }
        }
        self.table("cascade.csv", &["rule", "depth", "mean", "std", "trials"], &rows)
    }

    fn theorem1(&mut self) -> Result<()> {
        let d = self.cfg.d.unwrap_or(64);
        let widths = if self.cfg.widths.is_empty() { vec![1000] } else { self.cfg.widths.clone() };
        let dists = if self.cfg.dists.is_empty() {
            vec![DistConfig { kind: DistKind::Gaussian, scale: 1.0 }]
        } else {
            self.cfg.dists.clone()
        };
        let trials = self.cfg.trials.unwrap_or(20);
        let seed = self.derive("theorem1", EXPERIMENT_STREAM, 0);
        let mut rows = Vec::new();
        for rule in self.curve_rules(&[RuleSpec::new(RuleKind::Gbp)])? {
            for dist in &dists {
                for &n in &widths {
                    let s = theorem1_experiment(d, n, &self.dist(dist, seed)?, &rule, trials)?;
                    rows.push(vec![s.rule, s.dist, d.to_string(), n.to_string(), num(s.mean), num(s.std), s.trials.to_string()]);
                }
            }
        }
        self.table("theorem1.csv", &["rule", "dist", "d", "n", "mean", "std", "trials"], &rows)
    }

    fn theorem2(&mut self) -> Result<()> {
        let sub = Subcommand::Theorem2;
        let d = self.cfg.d.ok_or_else(|| missing("d", sub))?;
        let n = self.cfg.n.ok_or_else(|| missing("n", sub))?;
        let seed = self.derive("theorem2", EXPERIMENT_STREAM, 0);
        let s = theorem2_experiment(d, n, self.cfg.trials.unwrap_or(200), seed)?;
        self.summary.insert("holds_fraction".into(), json!(s.holds_fraction));
        let row = vec![
            d.to_string(),
            n.to_string(),
            s.trials.to_string(),
            s.holds.to_string(),
            num(s.holds_fraction),
            num(s.equality_gap),
            s.equality_holds.to_string(),
        ];
        self.table(
            "theorem2.csv",
            &["d", "n", "trials", "holds", "holds_fraction", "equality_gap", "equality_holds"],
            &[row],
        )
    }

    fn sanity(&mut self) -> Result<()> {
        let sub = Subcommand::Sanity;
        let net = self.model(sub, 0)?;
        let data = self.data(sub, &net, 0)?;
        let rule = self.rules(&[RuleSpec::new(RuleKind::Gbp)])?.remove(0);
        let layers = if self.cfg.layers.is_empty() { vec![net.depth()] } else { self.cfg.layers.clone() };
        let perturbations = if self.cfg.perturbations.is_empty() {
            let seed = self.derive("randomize", EXPERIMENT_STREAM, 0);
            vec![
                Perturbation::Randomize { dist: DistSpec::new(DistKind::Gaussian, 1.0, seed)? },
                Perturbation::Remove { keep_fraction: 0.0025 },
            ]
        } else {
            self.cfg.perturbations.clone()
        };
        for (j, p) in perturbations.iter().enumerate() {
            let table = sanity_experiment(&net, data.inputs(), &rule, &layers, p)
                .map_err(|e| NfrError::config(format!("perturbations[{j}]"), e.to_string()))?;
            self.summary.insert(format!("{j}_{}_mean_drop", p.name()), json!(table.mean_drop()));
            let rows: Vec<Vec<String>> = table
                .records
                .iter()
                .map(|r| vec![r.sample.to_string(), num(r.before), num(r.after), num(r.delta)])
                .collect();
            self.table(&format!("sanity_{j}_{}.csv", p.name()), &["sample", "before", "after", "delta"], &rows)?;
        }
        Ok(())
    }

    fn split(&mut self) -> Result<()> {
        let sub = Subcommand::Split;
        let net = self.model(sub, 0)?;
        let data = self.data(sub, &net, 0)?;
        let rules = self.rules(&[RuleSpec::new(RuleKind::Gbp)])?;
        let layers = if self.cfg.layers.is_empty() { vec![1, net.depth() - 1] } else { self.cfg.layers.clone() };
        let sides = if self.cfg.sides.is_empty() { vec![SplitSide::Max, SplitSide::Min] } else { self.cfg.sides.clone() };
        let fraction = self.cfg.fraction.unwrap_or(0.1);
        let mut rows = Vec::new();
        for (i, x) in data.inputs().iter().enumerate() {
            let trace = forward(&net, x)?;
            let k = self.class(&net, trace.predicted_class())?;
            for rule in &rules {
                let full = attribute_traced(&net, &trace, rule, k)?.values;
                for &l in &layers {
                    for &side in &sides {
                        let mut row = vec![i.to_string(), rule.label(), l.to_string(), side.name().to_string()];
                        match activation_split_attrib(&net, &trace, l, fraction, side, rule, k) {
                            Ok(att) => {
                                row.push(opt_num(alignment(&att.values, &full).ok().map(|a| a.value)));
                                row.push(opt_num(alignment(&att.values, x).ok().map(|a| a.value)));
                                row.push(String::new());
                            }
                            Err(e @ NfrError::EmptySplit(_)) => {
                                self.sample_errors += 1;
                                row.extend([String::new(), String::new(), e.to_string()]);
                            }
                            Err(e) => return Err(e),
                        }
                        rows.push(row);
                    }
                }
            }
        }
        self.table(
            "split.csv",
            &["sample", "rule", "layer", "side", "alignment_full", "alignment_input", "error"],
            &rows,
        )
    }

    fn geometry(&mut self) -> Result<()> {
        let net = self.model(Subcommand::Geometry, 0)?;
        let seed = self.derive("geometry", EXPERIMENT_STREAM, 0);
        let stats = orthogonality_stats(&net, seed)?;
        let rows: Vec<Vec<String>> = stats
            .layers
            .iter()
            .map(|g| {
                vec![g.layer.to_string(), num(g.mean_abs_cos), num(g.norm_mean), num(g.norm_std), g.pairs.to_string()]
            })
            .collect();
        self.table("geometry.csv", &["layer", "mean_abs_cos", "norm_mean", "norm_std", "pairs"], &rows)
    }

    fn kis(&mut self) -> Result<()> {
        let sub = Subcommand::Kis;
        let net = self.model(sub, 0)?;
        let data = self.data(sub, &net, 0)?;
        let rules = self.rules(&[RuleSpec::new(RuleKind::Gbp)])?;
        let variants = if self.cfg.variants.is_empty() { vec![KisVariant::Kis] } else { self.cfg.variants.clone() };
        let bins = self.cfg.bins.unwrap_or(20);
        for (j, rule) in rules.iter().enumerate() {
            for v in &variants {
                let report = kis_report(&net, &data, rule, *v);
                self.sample_errors += report.error_count();
                let stem = format!("kis_{}_{}", file_stem(rule, j), v.name());
                self.summary.insert(format!("{stem}_mean_correct"), json!(report.mean_correct()));
                self.summary.insert(format!("{stem}_mean_incorrect"), json!(report.mean_incorrect()));
                report.write_csv(fs::File::create(self.out.join(format!("{stem}.csv")))?)?;
                self.files.push(format!("{stem}.csv"));
                let mut w = csv::Writer::from_path(self.out.join(format!("{stem}_hist.csv")))?;
                w.write_record(["bin_lo", "bin_hi", "count_correct", "count_incorrect"])?;
                for b in report.histogram(bins)? {
                    w.write_record([num(b.bin_lo), num(b.bin_hi), b.count_correct.to_string(), b.count_incorrect.to_string()])?;
                }
                w.flush()?;
                self.files.push(format!("{stem}_hist.csv"));
            }
        }
        Ok(())
    }

    fn nfr_check(&mut self) -> Result<()> {
        let sub = Subcommand::NfrCheck;
        let net = self.model(sub, 0)?;
        let data = self.data(sub, &net, 0)?;
        let rules = self.rules(&[
            RuleSpec::new(RuleKind::Gbp),
            RuleSpec::new(RuleKind::Zplus),
            RuleSpec::rectgrad_tau(0.0),
        ])?;
        let mut rows = Vec::new();
        let mut checked = 0usize;
        let mut held = 0usize;
        for (i, x) in data.inputs().iter().enumerate() {
            let trace = forward(&net, x)?;
            let k = self.class(&net, trace.predicted_class())?;
            for (j, rule) in rules.iter().enumerate() {
                let report = nfr_check(&net, &trace, rule, k).map_err(|e| NfrError::config(format!("rules[{j}]"), e.to_string()))?;
                for rec in &report.layers {
                    checked += 1;
                    held += rec.holds as usize;
                    rows.push(vec![
                        i.to_string(),
                        rule.label(),
                        k.to_string(),
                        num(report.logit),
                        rec.layer_index.to_string(),
                        num(rec.lhs),
                        num(rec.rhs),
                        rec.noop.to_string(),
                        rec.holds.to_string(),
                        num(rec.gain),
                        rec.zero_product_only.to_string(),
                        num(rec.decomposition_error),
                    ]);
                }
            }
        }
        self.summary.insert("layers_checked".into(), json!(checked));
        self.summary.insert("layers_holding".into(), json!(held));
        self.table(
            "nfr.csv",
            &[
                "sample",
                "rule",
                "class",
                "logit",
                "layer_index",
                "lhs",
                "rhs",
                "noop",
                "holds",
                "gain",
                "zero_product_only",
                "decomposition_error",
            ],
            &rows,
        )
    }

    fn manifest(&self, sub: Subcommand) -> Result<()> {
        let manifest = json!({
            "tool": "nfrlab",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": sub.name(),
            "master_seed": self.seed,
            "rng": RNG_NAME,
            "seeds": self.seeds,
            "config": serde_json::to_value(self.cfg)?,
            "files": self.files,
            "summary": self.summary,
            "sample_errors": self.sample_errors,
        });
        fs::write(self.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

/// Execute `sub` with `cfg`, writing CSVs, tensors, images and
/// `manifest.json` into `out`. The output depends only on `cfg` and `seed`.
pub fn run(sub: Subcommand, cfg: &RunConfig, out: &Path, seed: u64) -> Result<RunOutcome> {
    if let Some(named) = cfg.subcommand {
        if named != sub {
            return Err(NfrError::config(
                "subcommand",
                format!("config is for {}, not {}", named.name(), sub.name()),
            ));
        }
    }
    fs::create_dir_all(out)?;
    let mut r = Run {
        cfg,
        out: out.to_path_buf(),
        seed,
        files: Vec::new(),
        seeds: BTreeMap::new(),
        summary: BTreeMap::new(),
        sample_errors: 0,
    };
    match sub {
        Subcommand::Attribute => r.attribute()?,
        Subcommand::Cascade => r.cascade()?,
        Subcommand::Theorem1 => r.theorem1()?,
        Subcommand::Theorem2 => r.theorem2()?,
        Subcommand::Sanity => r.sanity()?,
        Subcommand::Split => r.split()?,
        Subcommand::Geometry => r.geometry()?,
        Subcommand::Kis => r.kis()?,
        Subcommand::NfrCheck => r.nfr_check()?,
    }
    r.manifest(sub)?;
    r.files.push("manifest.json".into());
    Ok(RunOutcome { files: r.files, sample_errors: r.sample_errors })
}
