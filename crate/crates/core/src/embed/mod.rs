//! Embedding matrices, member concatenation, CSV/SVG output, and the exact
//! t-SNE projection used to inspect learned representations.

mod silhouette;
mod tsne;

pub use silhouette::silhouette;
pub use tsne::{calibrated_row_perplexities, pairwise_affinities, tsne, TsneConfig, TsneResult};

use std::io::Write;
use std::path::Path;

use crate::classify::CellType;
use crate::error::{CoreError, Result};

/// N x D matrix of row embeddings with per-row ids linking back to patches.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if ids.len() * dim != data.len() {
            return Err(CoreError::Config(format!(
                "embedding buffer {} does not match {} rows x {} dims",
                data.len(),
                ids.len(),
                dim
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Config("embeddings must be finite".into()));
        }
        Ok(Self { ids, dim, data })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(CoreError::Config("ragged embedding rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(ids, dim, data)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Concatenate per-member embeddings row-wise: D = sum of member dims.
/// Members must agree on row count and ids.
pub fn concat_member_embeddings(members: &[EmbeddingMatrix]) -> Result<EmbeddingMatrix> {
    let first = members
        .first()
        .ok_or_else(|| CoreError::Config("need at least one member embedding".into()))?;
    for m in members {
        if m.len() != first.len() {
            return Err(CoreError::Config(format!(
                "member row counts differ: {} vs {}",
                m.len(),
                first.len()
            )));
        }
        if m.ids != first.ids {
            return Err(CoreError::Config("member row ids differ".into()));
        }
    }
    let dim: usize = members.iter().map(|m| m.dim).sum();
    let mut data = Vec::with_capacity(first.len() * dim);
    for i in 0..first.len() {
        for m in members {
            data.extend_from_slice(m.row(i));
        }
    }
    EmbeddingMatrix::new(first.ids.clone(), dim, data)
}

/// Write as CSV: `id,e0,...` one row per embedding.
pub fn write_embeddings_csv(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path.as_ref())?;
    let header: Vec<String> = (0..matrix.dim).map(|i| format!("e{i}")).collect();
    writeln!(f, "id,{}", header.join(","))?;
    for (i, id) in matrix.ids.iter().enumerate() {
        let row: Vec<String> = matrix.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(f, "{id},{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_embeddings_csv(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id = parts
            .next()
            .ok_or_else(|| CoreError::Config(format!("line {}: missing id", ln + 1)))?;
        let row: Vec<f64> = parts
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|e| CoreError::Config(format!("line {}: bad number '{p}': {e}", ln + 1)))
            })
            .collect::<Result<_>>()?;
        ids.push(id.to_string());
        rows.push(row);
    }
    EmbeddingMatrix::from_rows(ids, &rows)
}

/// Write t-SNE coordinates: `id,x,y,label` (label blank when unknown).
pub fn write_tsne_csv(
    matrix_ids: &[String],
    coords: &[(f64, f64)],
    labels: Option<&[CellType]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    if matrix_ids.len() != coords.len() {
        return Err(CoreError::Config("ids and coordinates length mismatch".into()));
    }
    if let Some(l) = labels {
        if l.len() != coords.len() {
            return Err(CoreError::Config("labels length mismatch".into()));
        }
    }
    let mut f = std::fs::File::create(path.as_ref())?;
    writeln!(f, "id,x,y,label")?;
    for (i, (id, (x, y))) in matrix_ids.iter().zip(coords).enumerate() {
        let label = labels.map_or("", |l| l[i].name());
        writeln!(f, "{id},{x},{y},{label}")?;
    }
    Ok(())
}

/// Minimal SVG scatter plot with the fixed five-class palette and legend.
pub fn write_scatter_svg(
    coords: &[(f64, f64)],
    labels: Option<&[CellType]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    if coords.is_empty() {
        return Err(CoreError::Config("nothing to plot".into()));
    }
    let (w, h, margin) = (640.0, 480.0, 40.0);
    let min_x = coords.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let max_x = coords.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let min_y = coords.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let max_y = coords.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let sx = (w - 2.0 * margin) / (max_x - min_x).max(1e-12);
    let sy = (h - 2.0 * margin) / (max_y - min_y).max(1e-12);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, (x, y)) in coords.iter().enumerate() {
        let px = margin + (x - min_x) * sx;
        let py = h - margin - (y - min_y) * sy;
        let color = labels.map_or([90, 90, 90], |l| l[i].color());
        svg.push_str(&format!(
            "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"rgb({},{},{})\" fill-opacity=\"0.8\"/>\n",
            color[0], color[1], color[2]
        ));
    }
    if labels.is_some() {
        for (k, class) in CellType::ALL.iter().enumerate() {
            let y = 18.0 + 16.0 * k as f64;
            let c = class.color();
            svg.push_str(&format!(
                "<circle cx=\"14\" cy=\"{y}\" r=\"4\" fill=\"rgb({},{},{})\"/>\n",
                c[0], c[1], c[2]
            ));
            svg.push_str(&format!(
                "<text x=\"24\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
                y + 4.0,
                class.name()
            ));
        }
    }
    svg.push_str("</svg>\n");
    std::fs::write(path.as_ref(), svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(ids: &[&str], dim: usize, fill: f64) -> EmbeddingMatrix {
        let data: Vec<f64> = (0..ids.len() * dim).map(|i| fill + i as f64).collect();
        EmbeddingMatrix::new(ids.iter().map(|s| s.to_string()).collect(), dim, data).unwrap()
    }

    #[test]
    fn concat_three_members_gives_triple_dim() {
        let members = vec![toy(&["a", "b"], 128, 0.0), toy(&["a", "b"], 128, 1.5), toy(&["a", "b"], 128, 3.0)];
        let out = concat_member_embeddings(&members).unwrap();
        assert_eq!(out.dim(), 384);
        assert_eq!(out.len(), 2);
        // Row i is the concatenation of each member's row i.
        let expected: Vec<f64> = members.iter().flat_map(|m| m.row(1).to_vec()).collect();
        assert_eq!(out.row(1), &expected[..]);
    }

    #[test]
    fn concat_single_member_is_identity() {
        let m = toy(&["x", "y", "z"], 7, 0.25);
        assert_eq!(concat_member_embeddings(&[m.clone()]).unwrap(), m);
    }

    #[test]
    fn concat_rejects_mismatched_rows() {
        let a = toy(&["a", "b"], 4, 0.0);
        let b = toy(&["a"], 4, 0.0);
        assert!(concat_member_embeddings(&[a.clone(), b]).is_err());
        let c = toy(&["a", "c"], 4, 0.0);
        assert!(concat_member_embeddings(&[a, c]).is_err());
    }

    #[test]
    fn embeddings_csv_round_trip() {
        let m = toy(&["p0", "p1", "p2"], 5, -1.75);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        write_embeddings_csv(&m, &path).unwrap();
        let back = read_embeddings_csv(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn non_finite_embedding_rejected() {
        assert!(EmbeddingMatrix::new(vec!["a".into()], 2, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn scatter_svg_draws_points_and_legend() {
        use crate::classify::CellType;
        let coords = vec![(0.0, 0.0), (1.0, 1.0), (2.0, -1.0), (3.0, 0.5), (4.0, 2.0)];
        let labels = CellType::ALL.to_vec();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.svg");
        write_scatter_svg(&coords, Some(&labels), &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert_eq!(svg.matches("<circle").count(), coords.len() + 5);
        for class in CellType::ALL {
            assert!(svg.contains(class.name()));
        }
    }
}
