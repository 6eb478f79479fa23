//! Output formatting: 17-significant-digit floats, canonical JSON, CSV tables,
//! raw f64 arrays with a JSON sidecar, and the per-run manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::grid::{Axis, AxisKind, BoundaryRule, Field, Grid};

/// `d.dddddddddddddddde±x`; non-finite values print as `NaN`, `inf`, `-inf`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Pretty JSON with sorted keys, two-space indent, floats as [`fmt_f64`] and
/// non-finite floats as `null`. Byte-stable for equal inputs.
pub fn render_json(value: &Value) -> String {
    let mut out = String::new();
    render(value, 0, &mut out);
    out.push('\n');
    out
}

fn render(value: &Value, depth: usize, out: &mut String) {
    let pad = |d: usize| "  ".repeat(d);
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                match n.as_f64() {
                    Some(f) if f.is_finite() => out.push_str(&fmt_f64(f)),
                    _ => out.push_str("null"),
                }
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(depth + 1));
                render(item, depth + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(depth));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                out.push_str(&pad(depth + 1));
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push_str(": ");
                render(&map[*k], depth + 1, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(depth));
            out.push('}');
        }
    }
}

/// Serialize then render canonically.
pub fn to_json<T: Serialize>(value: &T) -> String {
    render_json(&serde_json::to_value(value).expect("serializable report"))
}

/// Numeric CSV: header row, comma separator, LF endings.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(row.iter().map(|v| fmt_f64(*v))).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("ascii csv")
}

/// Parses a numeric CSV written by [`csv_table`].
pub fn read_csv_table(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        rows.push(rec.iter().map(|s| s.parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?);
    }
    Ok((header, rows))
}

/// Little-endian f64 array.
pub fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f64_from_bytes(bytes: &[u8]) -> Result<Vec<f64>, String> {
    if bytes.len() % 8 != 0 {
        return Err(format!("binary length {} is not a multiple of 8", bytes.len()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

/// `(t, x, u)` rows for every node of every snapshot; two-dimensional fields add an `x2` column.
pub fn trajectory_csv(snapshots: &[Field]) -> String {
    let two_d = snapshots.first().is_some_and(|f| f.grid.dim() == 2);
    let header: &[&str] = if two_d { &["t", "x", "x2", "u"] } else { &["t", "x", "u"] };
    let rows = snapshots.iter().flat_map(|f| {
        (0..f.len()).map(move |k| {
            let x = f.grid.position(k);
            if two_d {
                vec![f.t, x[0], x[1], f.values[k]]
            } else {
                vec![f.t, x[0], f.values[k]]
            }
        })
    });
    csv_table(header, rows)
}

/// `(x, value)` rows of a field on the periodicity cell (`(x, x2, value)` in 2D).
pub fn eigenfunction_csv(v: &Field) -> String {
    let two_d = v.grid.dim() == 2;
    let header: &[&str] = if two_d { &["x", "x2", "value"] } else { &["x", "value"] };
    csv_table(
        header,
        (0..v.len()).map(|k| {
            let x = v.grid.position(k);
            if two_d { vec![x[0], x[1], v.values[k]] } else { vec![x[0], v.values[k]] }
        }),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AxisSidecar {
    pub period: f64,
    pub per_period: usize,
    /// `None` on a periodic axis.
    pub origin: Option<i64>,
    pub len: usize,
    pub boundary: Option<BoundaryRule>,
}

/// Describes a binary dump of snapshots: grid, times, and the value layout.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format: String,
    /// Flat index `i₁ + n₁·i₂`, snapshots concatenated in time order.
    pub layout: String,
    pub axes: Vec<AxisSidecar>,
    pub times: Vec<f64>,
    /// Per-snapshot window origins along each axis (windows move when recentered).
    pub origins: Vec<Vec<i64>>,
}

const BINARY_FORMAT: &str = "f64-le";

fn axis_sidecar(a: &Axis) -> AxisSidecar {
    match a.kind {
        AxisKind::Periodic => AxisSidecar { period: a.period, per_period: a.per_period, origin: None, len: a.len(), boundary: None },
        AxisKind::Window { origin, len, boundary } => {
            AxisSidecar { period: a.period, per_period: a.per_period, origin: Some(origin), len, boundary: Some(boundary) }
        }
    }
}

/// Raw values of every snapshot plus the JSON sidecar. All snapshots must share a shape.
pub fn snapshots_binary(snapshots: &[Field]) -> Result<(Vec<u8>, String), String> {
    let first = snapshots.first().ok_or("no snapshots to write")?;
    if snapshots.iter().any(|f| !f.grid.same_shape(&first.grid)) {
        return Err("snapshots differ in shape".into());
    }
    let sidecar = Sidecar {
        format: BINARY_FORMAT.into(),
        layout: "i1 + n1*i2".into(),
        axes: first.grid.axes().iter().map(axis_sidecar).collect(),
        times: snapshots.iter().map(|f| f.t).collect(),
        origins: snapshots.iter().map(|f| f.grid.axes().iter().map(|a| a.origin()).collect()).collect(),
    };
    let bytes = snapshots.iter().flat_map(|f| f64_bytes(&f.values)).collect();
    Ok((bytes, to_json(&sidecar)))
}

/// Inverse of [`snapshots_binary`].
pub fn snapshots_from_binary(bytes: &[u8], sidecar: &str) -> Result<Vec<Field>, String> {
    let sc: Sidecar = serde_json::from_str(sidecar).map_err(|e| format!("sidecar: {e}"))?;
    if sc.format != BINARY_FORMAT {
        return Err(format!("unknown binary format {:?}", sc.format));
    }
    if sc.origins.len() != sc.times.len() {
        return Err("sidecar has mismatched times and origins".into());
    }
    let values = f64_from_bytes(bytes)?;
    let per: usize = sc.axes.iter().map(|a| a.len).product();
    if values.len() != per * sc.times.len() {
        return Err(format!("expected {} values, found {}", per * sc.times.len(), values.len()));
    }
    let mut out = Vec::with_capacity(sc.times.len());
    for (s, (&t, origins)) in sc.times.iter().zip(&sc.origins).enumerate() {
        if origins.len() != sc.axes.len() {
            return Err("sidecar origin rank differs from the axis count".into());
        }
        let axes = sc
            .axes
            .iter()
            .zip(origins)
            .map(|(a, &o)| {
                let kind = match a.boundary {
                    None => AxisKind::Periodic,
                    Some(boundary) => AxisKind::Window { origin: o, len: a.len, boundary },
                };
                Axis { period: a.period, per_period: a.per_period, kind }
            })
            .collect();
        let grid = Grid::new(axes).map_err(|e| e.to_string())?;
        if grid.len() != per {
            return Err("sidecar axis lengths are inconsistent".into());
        }
        out.push(Field::new(grid, values[s * per..(s + 1) * per].to_vec(), t));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub kind: String,
    pub bytes: u64,
}

/// Output directory that records every file written into `manifest.json`.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), entries: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, kind: &str, contents: &[u8]) -> io::Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        self.entries.retain(|e| e.path != name);
        self.entries.push(ManifestEntry { path: name.to_string(), kind: kind.to_string(), bytes: contents.len() as u64 });
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, kind: &str, text: &str) -> io::Result<PathBuf> {
        self.write(name, kind, text.as_bytes())
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Writes `manifest.json` listing everything written so far.
    pub fn finish(self) -> io::Result<PathBuf> {
        let mut entries = self.entries;
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        let path = self.root.join("manifest.json");
        fs::write(&path, to_json(&serde_json::json!({ "outputs": entries })))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_is_seventeen_digits() {
        assert_eq!(fmt_f64(2.0), "2.0000000000000000e0");
        assert_eq!(fmt_f64(-0.1), "-1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        let v = 0.123456789012345678_f64;
        assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn json_is_sorted_and_stable() {
        let v = serde_json::json!({"b": 1.5, "a": [1, 2.0], "c": {"z": null, "y": "s"}});
        let s = render_json(&v);
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        assert!(s.contains("1.5000000000000000e0"));
        assert_eq!(s, render_json(&v));
    }

    #[test]
    fn csv_round_trip() {
        let text = csv_table(&["t", "x"], vec![vec![0.1, -3.0], vec![1e-300, 7.25]]);
        assert!(!text.contains('\r'));
        let (h, rows) = read_csv_table(&text).unwrap();
        assert_eq!(h, vec!["t", "x"]);
        assert_eq!(rows, vec![vec![0.1, -3.0], vec![1e-300, 7.25]]);
    }

    #[test]
    fn binary_round_trip() {
        let v = vec![0.1, -2.5, f64::MIN_POSITIVE, 1e300];
        assert_eq!(f64_from_bytes(&f64_bytes(&v)).unwrap(), v);
        assert!(f64_from_bytes(&[0u8; 7]).is_err());
    }

    #[test]
    fn snapshot_dump_round_trips() {
        let g = Grid::line(1.0, 8, 20, BoundaryRule::ClampToLimits).unwrap();
        let a = Field::from_fn(&g, |x| (-x[0] * x[0]).exp());
        let mut b = Field::from_fn(&g.shifted(0, 8), |x| 0.1 * x[0]);
        b.t = 0.5;
        let snaps = vec![a, b];
        let (bytes, sidecar) = snapshots_binary(&snaps).unwrap();
        assert_eq!(snapshots_from_binary(&bytes, &sidecar).unwrap(), snaps);
        assert!(snapshots_from_binary(&bytes[8..], &sidecar).is_err());

        let csv = trajectory_csv(&snaps);
        let (h, rows) = read_csv_table(&csv).unwrap();
        assert_eq!(h, vec!["t", "x", "u"]);
        assert_eq!(rows.len(), 2 * g.len());
        assert_eq!(rows[g.len()][0], 0.5);
    }

    #[test]
    fn eigenfunction_table_has_one_row_per_node() {
        let g = Grid::periodic(&[1.0, 2.0], 8).unwrap();
        let v = Field::constant(&g, 1.0);
        let (h, rows) = read_csv_table(&eigenfunction_csv(&v)).unwrap();
        assert_eq!(h, vec!["x", "x2", "value"]);
        assert_eq!(rows.len(), 64);
    }
}
