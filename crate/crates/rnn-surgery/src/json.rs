//! JSON on-disk format for the three network kinds.
//!
//! Top level: `{"kind": "fnn"|"rnn"|"mrnn", "dims": {...}, ...}`. Matrices are
//! arrays of rows. serde_json prints doubles with shortest round-trip
//! precision, so load(save(net)) == net bit for bit. Mask indices are
//! 0-based.

use crate::error::{Result, SurgeryError};
use crate::linalg::Mat;
use crate::network::{FeedforwardNet, ModifiedRecurrentNet, MrnnLayer, RecurrentNet, RnnLayer};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dims {
    pub d_x: usize,
    pub d_y: usize,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FnnLayerJson {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RnnLayerJson {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetworkFile {
    Fnn {
        dims: Dims,
        layers: Vec<FnnLayerJson>,
    },
    Rnn {
        dims: Dims,
        embed: Vec<Vec<f64>>,
        layers: Vec<RnnLayerJson>,
        project: Vec<Vec<f64>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        output_clip: Option<f64>,
    },
    Mrnn {
        dims: Dims,
        embed: Vec<Vec<f64>>,
        layers: Vec<RnnLayerJson>,
        project: Vec<Vec<f64>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        output_clip: Option<f64>,
    },
}

fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.rows).map(|i| m.row(i).to_vec()).collect()
}

fn rows_to_mat(rows: &[Vec<f64>]) -> Result<Mat> {
    if rows.is_empty() {
        return Err(SurgeryError::Shape("empty matrix".into()));
    }
    let c = rows[0].len();
    if rows.iter().any(|r| r.len() != c) {
        return Err(SurgeryError::Shape("ragged matrix rows".into()));
    }
    Ok(Mat::from_rows(rows))
}

impl NetworkFile {
    pub fn from_fnn(net: &FeedforwardNet) -> Self {
        NetworkFile::Fnn {
            dims: Dims {
                d_x: net.input_dim(),
                d_y: net.output_dim(),
                w: net.width(),
                l: net.depth(),
                n: None,
            },
            layers: net
                .layers
                .iter()
                .map(|(a, b)| FnnLayerJson {
                    a: mat_to_rows(a),
                    b: b.clone(),
                })
                .collect(),
        }
    }

    pub fn from_rnn(net: &RecurrentNet) -> Self {
        NetworkFile::Rnn {
            dims: Dims {
                d_x: net.input_dim(),
                d_y: net.output_dim(),
                w: net.width(),
                l: net.depth(),
                n: None,
            },
            embed: mat_to_rows(&net.embed),
            layers: net
                .layers
                .iter()
                .map(|l| RnnLayerJson {
                    a: mat_to_rows(&l.a),
                    b: mat_to_rows(&l.b),
                    c: l.c.clone(),
                    mask: None,
                })
                .collect(),
            project: mat_to_rows(&net.project),
            output_clip: net.output_clip,
        }
    }

    pub fn from_mrnn(net: &ModifiedRecurrentNet) -> Self {
        NetworkFile::Mrnn {
            dims: Dims {
                d_x: net.input_dim(),
                d_y: net.output_dim(),
                w: net.width(),
                l: net.depth(),
                n: None,
            },
            embed: mat_to_rows(&net.embed),
            layers: net
                .layers
                .iter()
                .map(|l| RnnLayerJson {
                    a: mat_to_rows(&l.a),
                    b: mat_to_rows(&l.b),
                    c: l.c.clone(),
                    mask: Some(
                        l.mask
                            .iter()
                            .enumerate()
                            .filter_map(|(i, &m)| if m { Some(i) } else { None })
                            .collect(),
                    ),
                })
                .collect(),
            project: mat_to_rows(&net.project),
            output_clip: net.output_clip,
        }
    }

    pub fn into_fnn(self) -> Result<FeedforwardNet> {
        match self {
            NetworkFile::Fnn { layers, .. } => {
                let mut out = Vec::with_capacity(layers.len());
                for l in &layers {
                    let a = rows_to_mat(&l.a)?;
                    if a.rows != l.b.len() {
                        return Err(SurgeryError::Shape("bias length != rows".into()));
                    }
                    out.push((a, l.b.clone()));
                }
                Ok(FeedforwardNet::new(out))
            }
            _ => Err(SurgeryError::Shape("expected kind \"fnn\"".into())),
        }
    }

    pub fn into_rnn(self) -> Result<RecurrentNet> {
        match self {
            NetworkFile::Rnn {
                embed,
                layers,
                project,
                output_clip,
                ..
            } => {
                let embed = rows_to_mat(&embed)?;
                let project = rows_to_mat(&project)?;
                let mut ls = Vec::with_capacity(layers.len());
                for l in &layers {
                    ls.push(RnnLayer {
                        a: rows_to_mat(&l.a)?,
                        b: rows_to_mat(&l.b)?,
                        c: l.c.clone(),
                    });
                }
                let mut net = RecurrentNet::new(embed, ls, project);
                net.output_clip = output_clip;
                Ok(net)
            }
            _ => Err(SurgeryError::Shape("expected kind \"rnn\"".into())),
        }
    }

    pub fn into_mrnn(self) -> Result<ModifiedRecurrentNet> {
        match self {
            NetworkFile::Mrnn {
                embed,
                layers,
                project,
                output_clip,
                ..
            } => {
                let embed = rows_to_mat(&embed)?;
                let project = rows_to_mat(&project)?;
                let w = embed.rows;
                let mut ls = Vec::with_capacity(layers.len());
                for l in &layers {
                    let mut mask = vec![false; w];
                    for &i in l.mask.as_deref().unwrap_or(&[]) {
                        if i >= w {
                            return Err(SurgeryError::Shape(format!(
                                "mask index {i} out of range for width {w}"
                            )));
                        }
                        mask[i] = true;
                    }
                    ls.push(MrnnLayer {
                        a: rows_to_mat(&l.a)?,
                        b: rows_to_mat(&l.b)?,
                        c: l.c.clone(),
                        mask,
                    });
                }
                let mut net = ModifiedRecurrentNet::new(embed, ls, project);
                net.output_clip = output_clip;
                Ok(net)
            }
            _ => Err(SurgeryError::Shape("expected kind \"mrnn\"".into())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&s)?)
    }
}
