//! Dataset recipes, manifests and the builder that materializes them.

use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::v3d::{load_volume, save_volume, VolumeData};
use super::PipelineError;
use crate::postproc::{postprocess, ConeSpec, PostprocFlags, WaveletSpec};
use crate::segmenter::SegSample;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// How many real and synthetic pairs a dataset takes, and which
/// post-processing its synthetic images receive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecipe {
    pub name: String,
    pub real: usize,
    pub synthetic: usize,
    #[serde(default)]
    pub postproc: PostprocFlags,
}

pub const RECIPE_NAMES: [&str; 7] = [
    "D_Synthetic",
    "D_Wavelet",
    "D_Cone",
    "D_WaveletCone",
    "D_Real",
    "D_17Real10Augmented",
    "D_17Real20Augmented",
];

impl DatasetRecipe {
    pub fn named(name: &str) -> Result<Self, PipelineError> {
        let flags = |wavelet, cone| PostprocFlags { wavelet, cone };
        let (real, synthetic, postproc) = match name {
            "D_Synthetic" => (0, 27, flags(false, false)),
            "D_Wavelet" => (0, 27, flags(true, false)),
            "D_Cone" => (0, 27, flags(false, true)),
            "D_WaveletCone" => (0, 27, flags(true, true)),
            "D_Real" => (17, 0, flags(false, false)),
            "D_17Real10Augmented" => (17, 10, flags(false, false)),
            "D_17Real20Augmented" => (17, 20, flags(false, false)),
            other => {
                return Err(PipelineError::UnknownRecipe {
                    name: other.to_string(),
                    valid: RECIPE_NAMES.join(", "),
                })
            }
        };
        Ok(Self {
            name: name.to_string(),
            real,
            synthetic,
            postproc,
        })
    }

    pub fn all_named() -> Vec<Self> {
        RECIPE_NAMES
            .iter()
            .map(|n| Self::named(n).expect("built-in recipe"))
            .collect()
    }

    /// `D_Foo` → `M_Foo`; other names get an `M_` prefix.
    pub fn model_name(&self) -> String {
        match self.name.strip_prefix("D_") {
            Some(rest) => format!("M_{rest}"),
            None => format!("M_{}", self.name),
        }
    }

    pub fn len(&self) -> usize {
        self.real + self.synthetic
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A recipe in a config: a built-in name or an inline definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecipeRef {
    Named(String),
    Custom(DatasetRecipe),
}

impl RecipeRef {
    pub fn resolve(&self) -> Result<DatasetRecipe, PipelineError> {
        match self {
            RecipeRef::Named(n) => DatasetRecipe::named(n),
            RecipeRef::Custom(r) => Ok(r.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub image_path: String,
    pub label_path: String,
    pub provenance: Provenance,
    pub postproc: PostprocFlags,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub name: String,
    pub entries: Vec<ManifestEntry>,
    /// Hash of the configuration that produced the dataset.
    pub created_from: String,
}

impl DatasetManifest {
    pub fn count(&self, provenance: Provenance) -> usize {
        self.entries
            .iter()
            .filter(|e| e.provenance == provenance)
            .count()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self)?;
        write_file(path.as_ref(), text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(PipelineError::Manifest(format!(
                "{}: schema version {} (expected {MANIFEST_SCHEMA_VERSION})",
                path.display(),
                m.schema_version
            )));
        }
        Ok(m)
    }

    /// Loads every pair, checking that files exist, parse, carry the right
    /// dtypes and share a grid. `base` is the manifest's directory.
    pub fn load_samples(&self, base: &Path) -> Result<Vec<SegSample>, PipelineError> {
        self.entries
            .iter()
            .map(|e| {
                let image = load_volume(resolve(base, &e.image_path))?.into_intensity()?;
                let labels = load_volume(resolve(base, &e.label_path))?.into_labels()?;
                image.same_grid(&labels.to_intensity())?;
                Ok(SegSample { image, labels })
            })
            .collect()
    }

    /// Counts per provenance and post-processing flags must match `recipe`;
    /// every referenced file must load.
    pub fn validate(&self, recipe: &DatasetRecipe, base: &Path) -> Result<(), PipelineError> {
        let (real, synth) = (
            self.count(Provenance::Real),
            self.count(Provenance::Synthetic),
        );
        if real != recipe.real || synth != recipe.synthetic {
            return Err(PipelineError::Manifest(format!(
                "{}: {real} real + {synth} synthetic entries, recipe needs {} + {}",
                self.name, recipe.real, recipe.synthetic
            )));
        }
        for e in &self.entries {
            let expected = match e.provenance {
                Provenance::Real => PostprocFlags::default(),
                Provenance::Synthetic => recipe.postproc,
            };
            if e.postproc != expected {
                return Err(PipelineError::Manifest(format!(
                    "{}: entry {} has post-processing {:?}, recipe needs {:?}",
                    self.name, e.image_path, e.postproc, expected
                )));
            }
        }
        self.load_samples(base).map(|_| ())
    }
}

pub(crate) fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// `target` relative to the directory `base`; both are made absolute first.
pub(crate) fn relative_to(target: &Path, base: &Path) -> Result<String, PipelineError> {
    let abs = |p: &Path| -> Result<PathBuf, PipelineError> {
        let p = if p.is_absolute() {
            p.to_path_buf()
        } else {
            std::env::current_dir()
                .map_err(|e| PipelineError::io(p, e))?
                .join(p)
        };
        // Lexical normalization only; the files may not exist yet.
        let mut out = PathBuf::new();
        for c in p.components() {
            match c {
                Component::CurDir => {}
                Component::ParentDir => {
                    out.pop();
                }
                other => out.push(other),
            }
        }
        Ok(out)
    };
    let (t, b) = (abs(target)?, abs(base)?);
    let tc: Vec<_> = t.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = tc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    let mut rel = PathBuf::new();
    for _ in common..bc.len() {
        rel.push("..");
    }
    for c in &tc[common..] {
        rel.push(c);
    }
    Ok(rel.to_string_lossy().replace('\\', "/"))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

/// Image/label file pair on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePair {
    pub image: PathBuf,
    pub labels: PathBuf,
}

/// Pools a recipe draws from, in order: the first `recipe.real` real pairs
/// and the first `recipe.synthetic` synthetic pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSources {
    pub real: Vec<SourcePair>,
    pub synthetic: Vec<SourcePair>,
}

/// Post-processing parameters applied to flagged synthetic images. A
/// missing cone uses the default sector of each volume's grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PostprocSettings {
    pub wavelet: WaveletSpec,
    pub cone: Option<ConeSpec>,
}

/// Writes `out_dir/manifest.json`. Real pairs and unprocessed synthetic
/// pairs are referenced in place; post-processed synthetic images are
/// written to `out_dir/images/`. Labels are never modified.
pub fn build_dataset(
    recipe: &DatasetRecipe,
    sources: &DatasetSources,
    settings: &PostprocSettings,
    out_dir: &Path,
    created_from: &str,
) -> Result<DatasetManifest, PipelineError> {
    for (kind, need, have) in [
        ("real", recipe.real, sources.real.len()),
        ("synthetic", recipe.synthetic, sources.synthetic.len()),
    ] {
        if have < need {
            return Err(PipelineError::MissingSources {
                recipe: recipe.name.clone(),
                kind,
                need,
                have,
            });
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(recipe.len());
    for pair in &sources.real[..recipe.real] {
        entries.push(ManifestEntry {
            image_path: relative_to(&pair.image, out_dir)?,
            label_path: relative_to(&pair.labels, out_dir)?,
            provenance: Provenance::Real,
            postproc: PostprocFlags::default(),
        });
    }
    let flags = recipe.postproc;
    for (i, pair) in sources.synthetic[..recipe.synthetic].iter().enumerate() {
        let image_path = if flags.wavelet || flags.cone {
            let image = load_volume(&pair.image)?.into_intensity()?;
            let cone = settings
                .cone
                .unwrap_or_else(|| ConeSpec::default_for(image.dims(), image.spacing()));
            let processed = postprocess(&image, flags, &settings.wavelet, &cone)?;
            let path = out_dir.join("images").join(format!("synthetic_{i:03}.v3d"));
            std::fs::create_dir_all(path.parent().expect("has parent"))
                .map_err(|e| PipelineError::io(&path, e))?;
            save_volume(&VolumeData::Intensity(processed), &path)?;
            relative_to(&path, out_dir)?
        } else {
            relative_to(&pair.image, out_dir)?
        };
        entries.push(ManifestEntry {
            image_path,
            label_path: relative_to(&pair.labels, out_dir)?,
            provenance: Provenance::Synthetic,
            postproc: flags,
        });
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        name: recipe.name.clone(),
        entries,
        created_from: created_from.to_string(),
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
