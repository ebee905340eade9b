//! Bag-of-label-words vectors and per-camera image-label matrices.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AnnotationRecord, CorpusStats, Vocabulary};
use crate::time::{format_utc, parse_utc};

/// Sparse label vector of one image. `dims` is sorted by dimension and holds no zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BagVector {
    dims: Vec<(usize, f64)>,
    weight_total: f64,
}

impl BagVector {
    /// Builds a bag from (dimension, weight) pairs. Zero weights are dropped,
    /// repeated dimensions are summed.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut map: BTreeMap<usize, f64> = BTreeMap::new();
        for (d, w) in pairs {
            *map.entry(d).or_insert(0.0) += w;
        }
        let dims: Vec<(usize, f64)> = map.into_iter().filter(|&(_, w)| w != 0.0).collect();
        let weight_total = dims.iter().map(|(_, w)| w.abs()).sum();
        BagVector { dims, weight_total }
    }

    pub fn dims(&self) -> &[(usize, f64)] {
        &self.dims
    }

    /// L1 norm of the vector.
    pub fn weight(&self) -> f64 {
        self.weight_total
    }

    pub fn get(&self, dim: usize) -> f64 {
        self.dims
            .binary_search_by_key(&dim, |&(d, _)| d)
            .map(|i| self.dims[i].1)
            .unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn max_dim(&self) -> Option<usize> {
        self.dims.last().map(|&(d, _)| d)
    }
}

/// Binary term-frequency vector: one for each vocabulary label present on the image.
pub fn vectorize(record: &AnnotationRecord, vocab: &Vocabulary) -> BagVector {
    BagVector::from_pairs(
        record
            .prefixed_labels()
            .filter_map(|l| vocab.get(&l))
            .map(|j| (j, 1.0)),
    )
}

/// Which document counts enter the per-camera idf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdfCounts {
    /// `n_j` counted over the camera's own images; idf is never negative.
    #[default]
    PerCamera,
    /// `n_j` counted over the whole corpus; idf can go negative.
    Global,
}

/// Per-camera inverse document frequency, `ln(N_c / n_j)`.
///
/// Entries are `None` for labels never seen (under the chosen counting), which
/// only ever multiply a zero term frequency.
pub fn per_camera_idf(
    vocab: &Vocabulary,
    stats: &CorpusStats,
    camera_id: &str,
    counts: IdfCounts,
) -> Result<Vec<Option<f64>>> {
    let n_c = *stats
        .per_camera_counts
        .get(camera_id)
        .ok_or_else(|| Error::invalid(format!("unknown camera {camera_id:?}")))?;
    if n_c == 0 {
        return Err(Error::invalid(format!("camera {camera_id:?} has no images")));
    }
    let doc = match counts {
        IdfCounts::PerCamera => stats
            .per_camera_doc_count
            .get(camera_id)
            .ok_or_else(|| Error::invalid(format!("no per-camera counts for {camera_id:?}")))?,
        IdfCounts::Global => &stats.doc_count,
    };
    if doc.len() != vocab.len() {
        return Err(Error::invalid("stats and vocabulary dimensions differ"));
    }
    Ok(doc
        .iter()
        .map(|&n| (n > 0).then(|| (n_c as f64 / n as f64).ln()))
        .collect())
}

/// Time-ordered bag vectors of one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageLabelMatrix {
    pub camera_id: String,
    rows: Vec<(DateTime<Utc>, BagVector)>,
    m: usize,
}

impl ImageLabelMatrix {
    /// Builds the matrix from (timestamp, bag) rows. Rows are sorted by time;
    /// for repeated timestamps the first row in input order is kept.
    pub fn new(camera_id: impl Into<String>, rows: Vec<(DateTime<Utc>, BagVector)>, m: usize) -> Result<Self> {
        let camera_id = camera_id.into();
        if let Some(d) = rows.iter().filter_map(|(_, b)| b.max_dim()).max() {
            if d >= m {
                return Err(Error::invalid(format!("dimension {d} outside vocabulary of {m}")));
            }
        }
        let mut rows = rows;
        rows.sort_by_key(|(t, _)| *t);
        let before = rows.len();
        rows.dedup_by_key(|(t, _)| *t);
        if rows.len() != before {
            log::warn!(
                "camera {camera_id}: dropped {} rows with repeated timestamps",
                before - rows.len()
            );
        }
        Ok(ImageLabelMatrix { camera_id, rows, m })
    }

    pub fn rows(&self) -> &[(DateTime<Utc>, BagVector)] {
        &self.rows
    }

    pub fn bags(&self) -> impl Iterator<Item = &BagVector> {
        self.rows.iter().map(|(_, b)| b)
    }

    pub fn timestamps(&self) -> impl Iterator<Item = DateTime<Utc>> + '_ {
        self.rows.iter().map(|(t, _)| *t)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn write(&self, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path)?;
        w.write_record(["row_index", "dim", "weight"])?;
        for (i, (_, bag)) in self.rows.iter().enumerate() {
            for &(d, x) in bag.dims() {
                w.write_record([i.to_string(), d.to_string(), x.to_string()])?;
            }
        }
        w.flush()?;
        let sidecar = Sidecar {
            camera_id: self.camera_id.clone(),
            timestamps: self.rows.iter().map(|(t, _)| format_utc(t)).collect(),
            m: self.m,
        };
        let mut f = File::create(sidecar_path)?;
        serde_json::to_writer(&mut f, &sidecar)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn read(csv_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let sidecar: Sidecar = serde_json::from_reader(BufReader::new(File::open(sidecar_path)?))?;
        let times = sidecar
            .timestamps
            .iter()
            .map(|s| parse_utc(s))
            .collect::<Result<Vec<_>>>()?;
        let mut pairs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); times.len()];
        let mut r = csv::Reader::from_path(csv_path)?;
        for rec in r.deserialize() {
            let (row, dim, weight): (usize, usize, f64) = rec?;
            let slot = pairs
                .get_mut(row)
                .ok_or_else(|| Error::invalid(format!("row index {row} beyond sidecar")))?;
            slot.push((dim, weight));
        }
        let rows = times
            .into_iter()
            .zip(pairs)
            .map(|(t, p)| (t, BagVector::from_pairs(p)))
            .collect();
        ImageLabelMatrix::new(sidecar.camera_id, rows, sidecar.m)
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    camera_id: String,
    timestamps: Vec<String>,
    #[serde(rename = "M")]
    m: usize,
}

/// Groups records by camera and vectorizes them, one matrix per camera.
pub fn build_matrices(records: &[AnnotationRecord], vocab: &Vocabulary) -> Result<BTreeMap<String, ImageLabelMatrix>> {
    let mut grouped: BTreeMap<&str, Vec<(DateTime<Utc>, BagVector)>> = BTreeMap::new();
    for r in records {
        grouped
            .entry(&r.camera_id)
            .or_default()
            .push((r.timestamp, vectorize(r, vocab)));
    }
    grouped
        .into_iter()
        .map(|(cam, rows)| Ok((cam.to_string(), ImageLabelMatrix::new(cam, rows, vocab.len())?)))
        .collect()
}

/// Multiplies every entry by its label's idf and recomputes row weights.
pub fn reweight(matrix: &ImageLabelMatrix, idf: &[Option<f64>]) -> Result<ImageLabelMatrix> {
    if idf.len() != matrix.m {
        return Err(Error::invalid(format!(
            "idf has {} components, matrix has {} dimensions",
            idf.len(),
            matrix.m
        )));
    }
    let rows = matrix
        .rows
        .iter()
        .map(|(t, bag)| {
            let pairs = bag
                .dims()
                .iter()
                .map(|&(d, tf)| (d, tf * idf[d].unwrap_or(0.0)));
            (*t, BagVector::from_pairs(pairs))
        })
        .collect();
    Ok(ImageLabelMatrix {
        camera_id: matrix.camera_id.clone(),
        rows,
        m: matrix.m,
    })
}
