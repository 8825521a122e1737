//! Model and generator files, grid/mesh tables, plot scripts and an artifact
//! writer that leaves no partial outputs behind.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::fmt_f64;
use crate::error::{Error, Result};
use crate::liegroup::GeneratorSet;
use crate::network::{Activation, AeModel, Layer, LayerSpec};
use crate::numerics::Matrix;
use crate::partition::{DecoderSurface, PartitionRaster};

pub const MODEL_FORMAT: &str = "cpa-ae-model/1";
pub const GENERATORS_FORMAT: &str = "cpa-ae-generators/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    #[serde(rename = "in")]
    in_dim: usize,
    #[serde(rename = "out")]
    out_dim: usize,
    activation: Activation,
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    encoder: Vec<LayerFile>,
    decoder: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorsFile {
    format: String,
    learnable: bool,
    generators: Vec<Vec<Vec<f64>>>,
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn rows_matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Ingestion(format!("{what} is not a nonempty rectangular matrix")));
    }
    Ok(Matrix::from_rows(rows))
}

fn ingest<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Ingestion(_) => e,
        other => Error::Ingestion(other.to_string()),
    })
}

/// Serializes a model. Floats use the shortest representation that parses
/// back to the same bits.
pub fn model_to_json(model: &AeModel) -> Result<String> {
    let part = |layers: &[Layer]| {
        layers
            .iter()
            .map(|l| LayerFile {
                in_dim: l.spec.in_dim,
                out_dim: l.spec.out_dim,
                activation: l.spec.activation,
                weight: matrix_rows(&l.weight),
                bias: l.bias.clone(),
            })
            .collect()
    };
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        encoder: part(&model.encoder),
        decoder: part(&model.decoder),
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn model_from_json(text: &str) -> Result<AeModel> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::Ingestion(format!("malformed model file: {e}")))?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Ingestion(format!("unsupported model format {:?}", file.format)));
    }
    let part = |layers: Vec<LayerFile>, side: &str| -> Result<Vec<Layer>> {
        layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let weight = rows_matrix(&l.weight, &format!("{side} layer {i} weight"))?;
                if !weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                    return Err(Error::Ingestion(format!("{side} layer {i} has non-finite parameters")));
                }
                Ok(Layer {
                    spec: LayerSpec::new(l.in_dim, l.out_dim, l.activation),
                    weight,
                    bias: l.bias,
                })
            })
            .collect()
    };
    let encoder = part(file.encoder, "encoder")?;
    let decoder = part(file.decoder, "decoder")?;
    ingest(AeModel::from_layers(encoder, decoder))
}

pub fn generators_to_json(gs: &GeneratorSet) -> Result<String> {
    let file = GeneratorsFile {
        format: GENERATORS_FORMAT.into(),
        learnable: gs.learnable,
        generators: gs.generators.iter().map(matrix_rows).collect(),
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn generators_from_json(text: &str) -> Result<GeneratorSet> {
    let file: GeneratorsFile =
        serde_json::from_str(text).map_err(|e| Error::Ingestion(format!("malformed generators file: {e}")))?;
    if file.format != GENERATORS_FORMAT {
        return Err(Error::Ingestion(format!(
            "unsupported generators format {:?}",
            file.format
        )));
    }
    let mats = file
        .generators
        .iter()
        .enumerate()
        .map(|(k, g)| rows_matrix(g, &format!("generator {k}")))
        .collect::<Result<Vec<_>>>()?;
    ingest(GeneratorSet::new(mats, file.learnable))
}

pub fn read_model(path: &Path) -> Result<AeModel> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", path.display())))?;
    model_from_json(&text)
}

pub fn read_generators(path: &Path) -> Result<GeneratorSet> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", path.display())))?;
    generators_from_json(&text)
}

/// `x,y,region,boundary` per pixel, row-major with `y` outer.
pub fn raster_csv(r: &PartitionRaster) -> String {
    let mut out = String::from("x,y,region,boundary\n");
    for (j, row) in r.ids.iter().enumerate() {
        for (i, id) in row.iter().enumerate() {
            let [x, y] = r.pixel_center(i, j);
            let _ = writeln!(out, "{},{},{id},{}", fmt_f64(x), fmt_f64(y), u8::from(r.boundary[j][i]));
        }
    }
    out
}

/// `z0..,x0..,region` per vertex.
pub fn surface_csv(s: &DecoderSurface) -> String {
    let h = s.latents.first().map_or(0, Vec::len);
    let d = s.vertices.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (0..h).map(|k| format!("z{k}")).collect();
    header.extend((0..d).map(|k| format!("x{k}")));
    header.push("region".into());
    let mut out = header.join(",") + "\n";
    for ((z, v), id) in s.latents.iter().zip(&s.vertices).zip(&s.region_ids) {
        let cells: Vec<String> = z.iter().chain(v).map(|&c| fmt_f64(c)).collect();
        let _ = writeln!(out, "{},{id}", cells.join(","));
    }
    out
}

/// Matplotlib script kinds emitted next to each artifact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Partition2d,
    Surface,
    BallCounts,
    Biorthogonality,
    EpsilonTrace,
    Curves,
}

/// Script that plots `data_file` (relative to the script's directory).
pub fn plot_script(kind: PlotKind, data_file: &str) -> String {
    let body = match kind {
        PlotKind::Partition2d => {
            "d = np.genfromtxt(path, delimiter=',', names=True)\n\
             xs, ys = np.unique(d['x']), np.unique(d['y'])\n\
             ids = d['region'].reshape(len(ys), len(xs))\n\
             plt.imshow(ids, origin='lower', extent=(xs[0], xs[-1], ys[0], ys[-1]), cmap='tab20', interpolation='nearest')\n\
             edge = d['boundary'] > 0\n\
             plt.scatter(d['x'][edge], d['y'][edge], s=0.5, c='k')\n\
             plt.xlabel('x0'); plt.ylabel('x1'); plt.title('input-space partition')\n"
        }
        PlotKind::Surface => {
            "d = np.genfromtxt(path, delimiter=',', names=True)\n\
             cols = [n for n in d.dtype.names if n.startswith('x')]\n\
             ax = plt.figure().add_subplot(projection='3d' if len(cols) >= 3 else None)\n\
             pts = [d[c] for c in cols[:3]]\n\
             ax.scatter(*pts, c=d['region'], cmap='tab20', s=2)\n\
             ax.set_title('decoder image colored by region')\n"
        }
        PlotKind::BallCounts => {
            "r = json.load(open(path))\n\
             plt.loglog(r['radii'], r['counts'], 'o-', label='regions')\n\
             plt.loglog(r['radii'], [max(c, 1) for c in r['data_counts']], 's--', label='data points')\n\
             plt.xlabel('radius'); plt.ylabel('count'); plt.legend()\n"
        }
        PlotKind::Biorthogonality => {
            "r = json.load(open(path))\n\
             plt.hist(r['residuals'], bins=30)\n\
             plt.xlabel('bi-orthogonality residual'); plt.ylabel('points')\n"
        }
        PlotKind::EpsilonTrace => {
            "rows = [json.loads(l) for l in open(path) if l.strip()]\n\
             eps = np.array([r['epsilon'] for r in rows])\n\
             steps = [r['step'] for r in rows]\n\
             for k in range(eps.shape[1]):\n    plt.plot(steps, eps[:, k], label=f'eps{k}')\n\
             plt.xlabel('step'); plt.ylabel('group strength'); plt.legend()\n"
        }
        PlotKind::Curves => {
            "rows = [json.loads(l) for l in open(path) if l.strip()]\n\
             rows = [r for r in rows if 'epoch' in r and 'train_mse' in r]\n\
             for key in ('train_mse', 'val_mse', 'test_mse'):\n    plt.semilogy([r['epoch'] for r in rows], [r[key] for r in rows], label=key)\n\
             plt.xlabel('epoch'); plt.legend()\n"
        }
    };
    format!(
        "import json, os\nimport numpy as np\nimport matplotlib.pyplot as plt\n\n\
         path = os.path.join(os.path.dirname(os.path.abspath(__file__)), {data_file:?})\n{body}\
         plt.savefig(os.path.splitext(path)[0] + '.png', dpi=150)\n"
    )
}

/// Writes artifacts into one directory and remembers them, so a failed
/// command can remove everything it wrote and leave only `error.json`.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Writes through a temporary name then renames, so a file is either
    /// complete or absent.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.partial"));
        fs::write(&tmp, contents)?;
        fs::rename(&tmp, &path)?;
        if !self.written.contains(&path) {
            self.written.push(path.clone());
        }
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, lines: &[T]) -> Result<PathBuf> {
        let mut text = String::new();
        for l in lines {
            text.push_str(&serde_json::to_string(l)?);
            text.push('\n');
        }
        self.write(name, &text)
    }

    /// Removes written files, then records `err` in `error.json`.
    pub fn fail(self, err: &Error) -> Result<PathBuf> {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        write_error_json(&self.dir, err)
    }
}

#[derive(Serialize)]
struct ErrorDoc<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

pub fn write_error_json(dir: &Path, err: &Error) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let doc = ErrorDoc {
        error: err.kind(),
        message: err.to_string(),
        exit_code: err.exit_code(),
    };
    let path = dir.join("error.json");
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(path)
}
