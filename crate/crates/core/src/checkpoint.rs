//! Versioned checkpoint persistence.
//!
//! A checkpoint is a single file: a UTF-8 text header (magic + version,
//! config echo, provenance, tensor declarations) terminated by a blank
//! line, followed by the declared tensors as little-endian `f32` arrays in
//! declaration order. The byte layout is documented in
//! `docs/checkpoint-format.md`.
//!
//! Arrays are rounded through `f32` at construction time, so
//! `load(save(c))` reproduces every array bit-exactly and `save(load(f))`
//! reproduces the file bytes.

use crate::error::{Error, Result};
use crate::model::{
    ClassId, ClassifierHead, ExtractorParams, ModelConfig, PreservedEmbedding, PriorProvenance,
};
use crate::numerics::{LstmParams, Mat2, Vec1};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "LEECKPT";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub dataset_hash: String,
    pub excluded_subject: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub extractor: ExtractorParams,
    pub head: Option<ClassifierHead>,
    pub head_registry: Vec<ClassId>,
    pub prior: Option<PreservedEmbedding>,
    pub provenance: Provenance,
}

fn round_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

impl Checkpoint {
    /// Builds a checkpoint, quantizing every array through `f32` so the
    /// in-memory value and the stored value are identical.
    pub fn new(
        config: ModelConfig,
        mut extractor: ExtractorParams,
        head: Option<ClassifierHead>,
        prior: Option<PreservedEmbedding>,
        provenance: Provenance,
    ) -> Self {
        for arr in extractor.arrays_mut() {
            round_f32(arr);
        }
        let head_registry = head.as_ref().map(|h| h.registry().to_vec()).unwrap_or_default();
        let head = head.map(|mut h| {
            for arr in h.arrays_mut() {
                round_f32(arr);
            }
            h
        });
        let prior = prior.map(|mut p| {
            round_f32(&mut p.values);
            p
        });
        Self {
            config,
            extractor,
            head,
            head_registry,
            prior,
            provenance,
        }
    }

    pub fn extractor_hash(&self) -> String {
        self.extractor.content_hash()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut file = fs::File::create(path)?;
        file.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(&format!("{MAGIC} {CHECKPOINT_VERSION}\n"));
        header.push_str(&format!(
            "config hidden={} embed={} seq_len={} input={} dropout={}\n",
            self.config.hidden,
            self.config.embed,
            self.config.seq_len,
            self.config.input,
            self.config.dropout
        ));
        header.push_str(&format!("seed {}\n", self.provenance.seed));
        header.push_str(&format!("dataset_hash {}\n", self.provenance.dataset_hash));
        if let Some(s) = self.provenance.excluded_subject {
            header.push_str(&format!("excluded_subject {s}\n"));
        }
        if let Some(head) = &self.head {
            let classes: Vec<String> = head.registry().iter().map(|c| c.to_string()).collect();
            header.push_str(&format!("classes {}\n", classes.join(",")));
        }
        if let Some(prior) = &self.prior {
            let subjects: Vec<String> =
                prior.provenance.subjects.iter().map(|s| s.to_string()).collect();
            let gestures: Vec<String> =
                prior.provenance.gestures.iter().map(|g| g.to_string()).collect();
            header.push_str(&format!(
                "prior_provenance subjects={} gestures={} checkpoint={}\n",
                subjects.join(","),
                gestures.join(","),
                prior.provenance.checkpoint_hash
            ));
        }

        let mut tensors: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        let h = self.config.hidden;
        let shapes: [Vec<usize>; 5] = [
            vec![4 * h, self.config.input],
            vec![4 * h, h],
            vec![4 * h],
            vec![self.config.embed, h],
            vec![self.config.embed],
        ];
        for ((name, arr), shape) in self.extractor.arrays().into_iter().zip(shapes) {
            tensors.push((name.to_string(), shape, arr));
        }
        if let Some(head) = &self.head {
            tensors.push((
                "head.w".into(),
                vec![head.class_count(), head.embed_dim()],
                head.w.as_slice(),
            ));
            tensors.push(("head.b".into(), vec![head.class_count()], &head.b));
        }
        if let Some(prior) = &self.prior {
            tensors.push(("prior.z".into(), vec![prior.values.len()], &prior.values));
        }

        for (name, shape, _) in &tensors {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            header.push_str(&format!("tensor {name} {}\n", dims.join(" ")));
        }
        header.push('\n');

        let mut out = header.into_bytes();
        for (_, _, arr) in &tensors {
            for &v in *arr {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let sep = find_header_end(bytes)
            .ok_or_else(|| Error::CorruptCheckpoint("missing header terminator".into()))?;
        let header = std::str::from_utf8(&bytes[..sep])
            .map_err(|_| Error::CorruptCheckpoint("header is not UTF-8".into()))?;
        let payload = &bytes[sep + 2..];

        let mut lines = header.lines();
        let magic_line = lines
            .next()
            .ok_or_else(|| Error::CorruptCheckpoint("empty header".into()))?;
        let mut magic_parts = magic_line.split_whitespace();
        if magic_parts.next() != Some(MAGIC) {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let version: u32 = magic_parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::CorruptCheckpoint("unreadable version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }

        let mut config: Option<ModelConfig> = None;
        let mut provenance = Provenance::default();
        let mut classes: Vec<ClassId> = Vec::new();
        let mut prior_prov: Option<PriorProvenance> = None;
        let mut tensor_decls: Vec<(String, Vec<usize>)> = Vec::new();

        for line in lines {
            let mut parts = line.splitn(2, ' ');
            let key = parts.next().unwrap_or("");
            let rest = parts.next().unwrap_or("");
            match key {
                "config" => {
                    let mut cfg = ModelConfig::default();
                    for kv in rest.split_whitespace() {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| Error::CorruptCheckpoint(format!("bad config entry {kv}")))?;
                        let parse_usize = |v: &str| {
                            v.parse::<usize>()
                                .map_err(|_| Error::CorruptCheckpoint(format!("bad config value {v}")))
                        };
                        match k {
                            "hidden" => cfg.hidden = parse_usize(v)?,
                            "embed" => cfg.embed = parse_usize(v)?,
                            "seq_len" => cfg.seq_len = parse_usize(v)?,
                            "input" => cfg.input = parse_usize(v)?,
                            "dropout" => {
                                cfg.dropout = v.parse().map_err(|_| {
                                    Error::CorruptCheckpoint(format!("bad dropout {v}"))
                                })?
                            }
                            _ => {}
                        }
                    }
                    config = Some(cfg);
                }
                "seed" => {
                    provenance.seed = rest
                        .trim()
                        .parse()
                        .map_err(|_| Error::CorruptCheckpoint("bad seed".into()))?;
                }
                "dataset_hash" => provenance.dataset_hash = rest.trim().to_string(),
                "excluded_subject" => {
                    provenance.excluded_subject = Some(
                        rest.trim()
                            .parse()
                            .map_err(|_| Error::CorruptCheckpoint("bad excluded_subject".into()))?,
                    );
                }
                "classes" => {
                    for c in rest.trim().split(',').filter(|s| !s.is_empty()) {
                        classes.push(
                            c.parse()
                                .map_err(|_| Error::CorruptCheckpoint(format!("bad class id {c}")))?,
                        );
                    }
                }
                "prior_provenance" => {
                    let mut pp = PriorProvenance::default();
                    for kv in rest.split_whitespace() {
                        let (k, v) = kv.split_once('=').ok_or_else(|| {
                            Error::CorruptCheckpoint(format!("bad prior provenance entry {kv}"))
                        })?;
                        match k {
                            "subjects" => {
                                pp.subjects = parse_id_list(v)?;
                            }
                            "gestures" => {
                                pp.gestures = parse_id_list(v)?;
                            }
                            "checkpoint" => pp.checkpoint_hash = v.to_string(),
                            _ => {}
                        }
                    }
                    prior_prov = Some(pp);
                }
                "tensor" => {
                    let mut it = rest.split_whitespace();
                    let name = it
                        .next()
                        .ok_or_else(|| Error::CorruptCheckpoint("tensor without name".into()))?
                        .to_string();
                    let mut shape = Vec::new();
                    for d in it {
                        shape.push(d.parse::<usize>().map_err(|_| {
                            Error::CorruptCheckpoint(format!("bad tensor dim {d}"))
                        })?);
                    }
                    tensor_decls.push((name, shape));
                }
                "" => {}
                other => {
                    return Err(Error::CorruptCheckpoint(format!("unknown header key {other}")))
                }
            }
        }

        let config = config.ok_or_else(|| Error::CorruptCheckpoint("missing config line".into()))?;

        let total_len: usize = tensor_decls
            .iter()
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum();
        if payload.len() != total_len * 4 {
            return Err(Error::CorruptCheckpoint(format!(
                "payload holds {} bytes, declarations require {}",
                payload.len(),
                total_len * 4
            )));
        }

        let mut offset = 0usize;
        let mut read_tensor = |shape: &[usize]| -> Vec<f64> {
            let n: usize = shape.iter().product();
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let at = offset + i * 4;
                let raw: [u8; 4] = payload[at..at + 4].try_into().unwrap();
                out.push(f32::from_le_bytes(raw) as f64);
            }
            offset += n * 4;
            out
        };

        let h = config.hidden;
        let expect = |name: &str, expected: Vec<usize>, decl: &(String, Vec<usize>)| -> Result<()> {
            if decl.0 != name {
                return Err(Error::CorruptCheckpoint(format!(
                    "expected tensor {name}, found {}",
                    decl.0
                )));
            }
            if decl.1 != expected {
                return Err(Error::CheckpointShapeMismatch {
                    tensor: name.to_string(),
                    expected,
                    found: decl.1.clone(),
                });
            }
            Ok(())
        };

        let mut decls = tensor_decls.iter();
        let mut next_decl = |name: &str, expected: Vec<usize>| -> Result<Vec<f64>> {
            let decl = decls
                .next()
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))?;
            expect(name, expected, decl)?;
            Ok(read_tensor(&decl.1))
        };

        let w_x = next_decl("lstm.w_x", vec![4 * h, config.input])?;
        let w_h = next_decl("lstm.w_h", vec![4 * h, h])?;
        let b = next_decl("lstm.b", vec![4 * h])?;
        let proj_w = next_decl("proj.w", vec![config.embed, h])?;
        let proj_b = next_decl("proj.b", vec![config.embed])?;

        let extractor = ExtractorParams {
            lstm: LstmParams {
                input: config.input,
                hidden: h,
                w_x: Mat2::new(4 * h, config.input, w_x)
                    .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
                w_h: Mat2::new(4 * h, h, w_h)
                    .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
                b: Vec1::new(b).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
            },
            proj_w: Mat2::new(config.embed, h, proj_w)
                .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
            proj_b: Vec1::new(proj_b).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
        };

        let head = if !classes.is_empty() {
            let hw = next_decl("head.w", vec![classes.len(), config.embed])?;
            let hb = next_decl("head.b", vec![classes.len()])?;
            Some(ClassifierHead::from_parts(
                Mat2::new(classes.len(), config.embed, hw)
                    .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
                Vec1::new(hb).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
                classes.clone(),
            ))
        } else {
            None
        };

        let prior = if let Some(pp) = prior_prov {
            let z = next_decl("prior.z", vec![config.embed])?;
            Some(PreservedEmbedding {
                values: Vec1::new(z).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?,
                provenance: pp,
            })
        } else {
            None
        };

        if decls.next().is_some() {
            return Err(Error::CorruptCheckpoint("unexpected trailing tensor".into()));
        }

        Ok(Self {
            config,
            extractor,
            head,
            head_registry: classes,
            prior,
            provenance,
        })
    }
}

fn parse_id_list(v: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for part in v.split(',').filter(|s| !s.is_empty()) {
        out.push(
            part.parse()
                .map_err(|_| Error::CorruptCheckpoint(format!("bad id {part}")))?,
        );
    }
    Ok(out)
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    bytes.windows(2).position(|w| w == b"\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_checkpoint(with_head: bool, with_prior: bool) -> Checkpoint {
        let cfg = ModelConfig {
            hidden: 8,
            embed: 4,
            seq_len: 6,
            input: 3,
            dropout: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let extractor = ExtractorParams::init(&cfg, &mut rng);
        let head = with_head.then(|| ClassifierHead::new(&[3, 9], cfg.embed, &mut rng).unwrap());
        let prior = with_prior.then(|| PreservedEmbedding {
            values: Vec1::new(vec![0.25, -1.5, 0.75, 2.0]).unwrap(),
            provenance: PriorProvenance {
                subjects: vec![0, 1, 2],
                gestures: vec![4, 5],
                checkpoint_hash: "abc123".into(),
            },
        });
        Checkpoint::new(
            cfg,
            extractor,
            head,
            prior,
            Provenance {
                seed: 99,
                dataset_hash: "deadbeef".into(),
                excluded_subject: Some(7),
            },
        )
    }

    #[test]
    fn round_trip_bit_identical() {
        let ckpt = sample_checkpoint(true, false);
        let bytes = ckpt.to_bytes();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(loaded, ckpt);
        assert_eq!(loaded.to_bytes(), bytes);
    }

    #[test]
    fn round_trip_with_prior() {
        let ckpt = sample_checkpoint(true, true);
        let loaded = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(loaded, ckpt);
        assert!(loaded.prior.is_some());
        assert_eq!(loaded.prior.unwrap().provenance.subjects, vec![0, 1, 2]);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = sample_checkpoint(false, false).to_bytes();
        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(
            Checkpoint::from_bytes(truncated),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn version_mismatch_detected() {
        let bytes = sample_checkpoint(false, false).to_bytes();
        let text = String::from_utf8_lossy(&bytes[..20]).to_string();
        assert!(text.starts_with("LEECKPT 1"));
        let mut bumped = bytes.clone();
        bumped[8] = b'2';
        assert!(matches!(
            Checkpoint::from_bytes(&bumped),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn garbage_is_corrupt() {
        assert!(matches!(
            Checkpoint::from_bytes(b"not a checkpoint at all"),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("lee-core-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("test.ckpt");
        let ckpt = sample_checkpoint(true, true);
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        std::fs::remove_file(&path).ok();
    }
}
