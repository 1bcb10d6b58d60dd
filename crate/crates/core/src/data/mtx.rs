use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use super::{read_lines, CountMatrix, Labels};
use crate::error::{Error, Result};

/// How matrix rows map onto samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Orientation {
    /// Decided from gene/label file lengths; rows are samples when ambiguous.
    #[default]
    Auto,
    SamplesByGenes,
    /// The 10x layout: genes are rows, cells are columns.
    GenesBySamples,
}

impl FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Orientation::Auto),
            "samples-by-genes" | "rows-samples" => Ok(Orientation::SamplesByGenes),
            "genes-by-samples" | "rows-genes" => Ok(Orientation::GenesBySamples),
            other => Err(Error::Contract(format!("unknown orientation '{other}'"))),
        }
    }
}

struct RawMtx {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, u64)>,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

fn parse_count(path: &Path, line: usize, tok: &str, integer: bool) -> Result<u64> {
    if integer {
        if let Ok(v) = tok.parse::<u64>() {
            return Ok(v);
        }
        if tok.starts_with('-') {
            return Err(parse_err(path, line, format!("negative count {tok}")));
        }
        return Err(parse_err(path, line, format!("invalid integer '{tok}'")));
    }
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid number '{tok}'")))?;
    if v < 0.0 {
        return Err(parse_err(path, line, format!("negative count {tok}")));
    }
    if !v.is_finite() || v.fract() != 0.0 {
        return Err(parse_err(path, line, format!("non-integral count {tok}")));
    }
    Ok(v as u64)
}

fn read_raw(path: &Path) -> Result<RawMtx> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    let (ln, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let h: Vec<String> = header
        .split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .collect();
    if h.len() != 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" {
        return Err(parse_err(path, ln, "malformed MatrixMarket header"));
    }
    if h[2] != "coordinate" {
        return Err(parse_err(
            path,
            ln,
            format!("unsupported format '{}'", h[2]),
        ));
    }
    let integer = match h[3].as_str() {
        "integer" => true,
        "real" => false,
        other => return Err(parse_err(path, ln, format!("unsupported field '{other}'"))),
    };
    if h[4] != "general" {
        return Err(parse_err(
            path,
            ln,
            format!("unsupported symmetry '{}'", h[4]),
        ));
    }

    let mut lines = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (ln, size) = lines
        .next()
        .ok_or_else(|| parse_err(path, ln + 1, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(path, ln, "malformed size line"))?;
    let [rows, cols, nnz] = dims[..] else {
        return Err(parse_err(
            path,
            ln,
            "size line needs rows, cols and entries",
        ));
    };

    let mut entries = Vec::with_capacity(nnz);
    let mut last_line = ln;
    for (ln, l) in lines {
        last_line = ln;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(path, ln, "expected 'row col value'"));
        }
        let r: usize = toks[0]
            .parse()
            .map_err(|_| parse_err(path, ln, format!("invalid row index '{}'", toks[0])))?;
        let c: usize = toks[1]
            .parse()
            .map_err(|_| parse_err(path, ln, format!("invalid column index '{}'", toks[1])))?;
        if r == 0 || r > rows || c == 0 || c > cols {
            return Err(parse_err(
                path,
                ln,
                format!("entry ({r}, {c}) outside {rows}x{cols}"),
            ));
        }
        let v = parse_count(path, ln, toks[2], integer)?;
        entries.push((r - 1, c - 1, v));
        if entries.len() > nnz {
            return Err(parse_err(path, ln, format!("more than {nnz} entries")));
        }
    }
    if entries.len() != nnz {
        return Err(parse_err(
            path,
            last_line,
            format!("expected {nnz} entries, found {}", entries.len()),
        ));
    }
    Ok(RawMtx {
        rows,
        cols,
        entries,
    })
}

fn transposed(
    orientation: Orientation,
    rows: usize,
    cols: usize,
    genes: Option<usize>,
    labels: Option<usize>,
) -> bool {
    match orientation {
        Orientation::SamplesByGenes => false,
        Orientation::GenesBySamples => true,
        Orientation::Auto => {
            let by_labels = labels.map(|n| (n == rows, n == cols));
            let by_genes = genes.map(|n| (n == cols, n == rows));
            // Each hint is (fits as-is, fits transposed).
            matches!(
                (by_labels, by_genes),
                (Some((false, true)), _) | (_, Some((false, true)))
            )
        }
    }
}

/// Loads a Matrix Market count matrix, normalising it to samples × genes.
pub fn load_mtx(
    matrix: &Path,
    genes: Option<&Path>,
    labels: Option<&Path>,
    orientation: Orientation,
) -> Result<CountMatrix> {
    let raw = read_raw(matrix)?;
    let gene_names = genes.map(read_lines).transpose()?;
    let label_names = labels.map(read_lines).transpose()?;
    let flip = transposed(
        orientation,
        raw.rows,
        raw.cols,
        gene_names.as_ref().map(Vec::len),
        label_names.as_ref().map(Vec::len),
    );
    let (n_samples, n_genes, triplets) = if flip {
        let t: Vec<_> = raw.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        (raw.cols, raw.rows, t)
    } else {
        (raw.rows, raw.cols, raw.entries)
    };
    let mut m = CountMatrix::from_triplets(n_samples, n_genes, &triplets)?;
    if let (Some(names), Some(p)) = (gene_names, genes) {
        if names.len() != n_genes {
            return Err(parse_err(
                p,
                names.len(),
                format!("{} gene names for {n_genes} genes", names.len()),
            ));
        }
        m = m.with_gene_names(names)?;
    }
    if let (Some(names), Some(p)) = (label_names, labels) {
        if names.len() != n_samples {
            return Err(parse_err(
                p,
                names.len(),
                format!("{} labels for {n_samples} samples", names.len()),
            ));
        }
        m = m.with_labels(Labels::from_strings(&names))?;
    }
    Ok(m)
}

/// Writes samples × genes coordinates with integer values.
pub fn write_mtx(path: &Path, m: &CountMatrix) -> Result<()> {
    let mut out = Vec::new();
    let t = m.triplets();
    writeln!(out, "%%MatrixMarket matrix coordinate integer general").expect("vec write");
    writeln!(out, "{} {} {}", m.n_samples(), m.n_genes(), t.len()).expect("vec write");
    for (r, c, v) in t {
        writeln!(out, "{} {} {}", r + 1, c + 1, v).expect("vec write");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    const TOY: &str =
        "%%MatrixMarket matrix coordinate integer general\n% comment\n2 3 2\n1 1 5\n2 3 2\n";

    #[test]
    fn toy_matrix() {
        let f = file(TOY);
        let m = load_mtx(f.path(), None, None, Orientation::Auto).unwrap();
        assert_eq!(m.n_samples(), 2);
        assert_eq!(m.scale(), &[5.0, 2.0]);
        assert_eq!(m.feature_mask(), &[0, 2]);
    }

    #[test]
    fn orientation_from_gene_file() {
        let f =
            file("%%MatrixMarket matrix coordinate integer general\n2 3 3\n1 1 5\n1 2 1\n2 3 2\n");
        let g = file("a\nb\n");
        let m = load_mtx(f.path(), Some(g.path()), None, Orientation::Auto).unwrap();
        assert_eq!((m.n_samples(), m.n_genes()), (3, 2));
        let l = file("x\ny\n");
        let m = load_mtx(f.path(), None, Some(l.path()), Orientation::Auto).unwrap();
        assert_eq!((m.n_samples(), m.n_genes()), (2, 3));
        let m = load_mtx(f.path(), None, None, Orientation::GenesBySamples).unwrap();
        assert_eq!(m.scale(), &[5.0, 1.0, 2.0]);
    }

    #[test]
    fn real_integral_values_accepted() {
        let f = file("%%MatrixMarket matrix coordinate real general\n1 2 2\n1 1 3.0\n1 2 1\n");
        let m = load_mtx(f.path(), None, None, Orientation::SamplesByGenes).unwrap();
        assert_eq!(m.scale(), &[3.0]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("%%MatrixMarket matrix array real general\n", 1),
            (
                "%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 2.5\n",
                3,
            ),
            (
                "%%MatrixMarket matrix coordinate integer general\n1 1 1\n1 1 -2\n",
                3,
            ),
            (
                "%%MatrixMarket matrix coordinate integer general\n1 1 2\n1 1 2\n",
                3,
            ),
            ("garbage\n", 1),
        ];
        for (text, want) in cases {
            let f = file(text);
            match load_mtx(f.path(), None, None, Orientation::Auto) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text}"),
                other => panic!("{text}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn label_length_mismatch() {
        let f = file(TOY);
        let l = file("x\ny\nz\nw\n");
        assert!(matches!(
            load_mtx(f.path(), None, Some(l.path()), Orientation::SamplesByGenes),
            Err(Error::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn empty_matrix() {
        let f = file("%%MatrixMarket matrix coordinate integer general\n0 5 0\n");
        match load_mtx(f.path(), None, None, Orientation::Auto) {
            Err(Error::Data(m)) => assert!(m.contains("no samples")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_then_load() {
        let f = file(TOY);
        let m = load_mtx(f.path(), None, None, Orientation::Auto).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_mtx(out.path(), &m).unwrap();
        let again = load_mtx(out.path(), None, None, Orientation::SamplesByGenes).unwrap();
        assert_eq!(m.triplets(), again.triplets());
    }
}
