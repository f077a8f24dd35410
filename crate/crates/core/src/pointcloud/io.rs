use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    /// Whitespace-separated columns.
    Xyz,
    /// Comma-separated columns.
    Csv,
    /// ASCII PLY with a `vertex` element.
    PlyAscii,
}

impl Format {
    /// Guess from a file extension: `.csv`, `.ply`, anything else is xyz.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            Some(e) if e.eq_ignore_ascii_case("ply") => Format::PlyAscii,
            _ => Format::Xyz,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" | "txt" => Ok(Format::Xyz),
            "csv" => Ok(Format::Csv),
            "ply" | "ply-ascii" => Ok(Format::PlyAscii),
            other => Err(Error::InvalidArgument(format!("unknown cloud format `{other}`"))),
        }
    }
}

/// Role of one column of a text cloud.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Column {
    X,
    Y,
    Z,
    /// A raw real-valued feature.
    Feature,
    /// A color byte in `0..=255`, stored as a feature scaled to `[0, 1]`.
    Color,
    Label,
    Skip,
}

/// Column layout and class count of a text cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
    pub class_count: usize,
}

impl Schema {
    pub fn xyz(class_count: usize) -> Self {
        Self {
            columns: vec![Column::X, Column::Y, Column::Z],
            class_count,
        }
    }

    pub fn xyz_rgb(class_count: usize) -> Self {
        let mut s = Self::xyz(class_count);
        s.columns.extend([Column::Color; 3]);
        s
    }

    pub fn with_label(mut self) -> Self {
        self.columns.push(Column::Label);
        self
    }

    /// Parses a compact role string such as `xyzrgbl`: `x`, `y`, `z`,
    /// `r`/`g`/`b` (color bytes), `f` (raw feature), `l` (label), `_` (skip).
    pub fn parse_roles(roles: &str, class_count: usize) -> Result<Self> {
        let columns = roles
            .chars()
            .map(|c| match c {
                'x' => Ok(Column::X),
                'y' => Ok(Column::Y),
                'z' => Ok(Column::Z),
                'r' | 'g' | 'b' => Ok(Column::Color),
                'f' => Ok(Column::Feature),
                'l' => Ok(Column::Label),
                '_' => Ok(Column::Skip),
                other => Err(Error::Schema(format!("unknown column role `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let s = Self {
            columns,
            class_count,
        };
        s.validate()?;
        Ok(s)
    }

    fn count(&self, c: Column) -> usize {
        self.columns.iter().filter(|&&x| x == c).count()
    }

    pub fn feature_dim(&self) -> usize {
        self.count(Column::Feature) + self.count(Column::Color)
    }

    pub fn has_label(&self) -> bool {
        self.count(Column::Label) == 1
    }

    fn validate(&self) -> Result<()> {
        for c in [Column::X, Column::Y, Column::Z] {
            if self.count(c) != 1 {
                return Err(Error::Schema(format!("exactly one {c:?} column required")));
            }
        }
        if self.count(Column::Label) > 1 {
            return Err(Error::Schema("at most one label column".into()));
        }
        if self.class_count == 0 {
            return Err(Error::Schema("class count must be positive".into()));
        }
        Ok(())
    }
}

/// Parses a text cloud. For PLY the column roles come from the header and
/// only `schema.class_count` is used.
pub fn parse_cloud<R: BufRead>(reader: R, format: Format, schema: &Schema) -> Result<PointCloud> {
    match format {
        Format::Xyz => parse_delimited(reader, None, schema, 0),
        Format::Csv => parse_delimited(reader, Some(','), schema, 0),
        Format::PlyAscii => parse_ply(reader, schema.class_count),
    }
}

/// Opens and parses a cloud file.
pub fn read_cloud(path: &Path, format: Format, schema: &Schema) -> Result<PointCloud> {
    let f = std::fs::File::open(path)?;
    parse_cloud(std::io::BufReader::new(f), format, schema)
}

fn parse_delimited<R: BufRead>(
    reader: R,
    delimiter: Option<char>,
    schema: &Schema,
    line_offset: usize,
) -> Result<PointCloud> {
    schema.validate()?;
    let d = schema.feature_dim();
    let mut positions = Vec::new();
    let mut features = Vec::new();
    let mut labels = schema.has_label().then(Vec::new);
    let mut values = Vec::with_capacity(schema.columns.len());
    for (no, line) in reader.lines().enumerate() {
        let line_no = no + 1 + line_offset;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        values.clear();
        let tokens: Box<dyn Iterator<Item = &str>> = match delimiter {
            Some(c) => Box::new(body.split(c).map(str::trim)),
            None => Box::new(body.split_whitespace()),
        };
        for tok in tokens {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("`{tok}` is not a number"),
            })?;
            values.push(v);
        }
        if values.len() != schema.columns.len() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} columns, found {}", schema.columns.len(), values.len()),
            });
        }
        push_row(&values, &schema.columns, schema.class_count, line_no, &mut positions, &mut features, labels.as_mut())?;
    }
    if positions.is_empty() {
        return Err(Error::NoPoints);
    }
    PointCloud::new(positions, features, d, labels, schema.class_count)
}

fn push_row(
    values: &[f64],
    columns: &[Column],
    class_count: usize,
    line: usize,
    positions: &mut Vec<[f64; 3]>,
    features: &mut Vec<f64>,
    labels: Option<&mut Vec<usize>>,
) -> Result<()> {
    let mut p = [0.0; 3];
    let mut label = None;
    for (&v, &role) in values.iter().zip(columns) {
        match role {
            Column::X => p[0] = v,
            Column::Y => p[1] = v,
            Column::Z => p[2] = v,
            Column::Feature => features.push(v),
            Column::Color => features.push(v / 255.0),
            Column::Label => label = Some(v),
            Column::Skip => {}
        }
    }
    if p.iter().any(|c| !c.is_finite()) {
        return Err(Error::Parse {
            line,
            msg: "non-finite coordinate".into(),
        });
    }
    positions.push(p);
    if let (Some(out), Some(v)) = (labels, label) {
        if v < 0.0 || v.fract() != 0.0 || v >= class_count as f64 {
            return Err(Error::Schema(format!(
                "line {line}: label {v} outside [0, {class_count})"
            )));
        }
        out.push(v as usize);
    }
    Ok(())
}

fn parse_ply<R: BufRead>(reader: R, class_count: usize) -> Result<PointCloud> {
    let mut lines = reader.lines();
    let next = |lines: &mut std::io::Lines<R>| -> Result<Option<String>> { Ok(lines.next().transpose()?) };
    let magic = next(&mut lines)?;
    if magic.as_deref().map(str::trim) != Some("ply") {
        return Err(Error::Parse {
            line: 1,
            msg: "missing `ply` magic".into(),
        });
    }
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut columns = Vec::new();
    let mut vertex_first = true;
    let mut header_lines = 1;
    loop {
        let Some(line) = next(&mut lines)? else {
            return Err(Error::Parse {
                line: header_lines + 1,
                msg: "header not terminated by `end_header`".into(),
            });
        };
        header_lines += 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(Error::Parse {
                    line: header_lines,
                    msg: format!("unsupported PLY format `{other}`"),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                if *name == "vertex" {
                    if vertex_count.is_some() || !columns.is_empty() {
                        return Err(Error::Parse {
                            line: header_lines,
                            msg: "duplicate vertex element".into(),
                        });
                    }
                    vertex_count = Some(count.parse::<usize>().map_err(|_| Error::Parse {
                        line: header_lines,
                        msg: format!("bad vertex count `{count}`"),
                    })?);
                    in_vertex = true;
                } else {
                    if vertex_count.is_none() {
                        vertex_first = false;
                    }
                    in_vertex = false;
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::Parse {
                    line: header_lines,
                    msg: "list properties on vertices are not supported".into(),
                })
            }
            ["property", _ty, name] if in_vertex => columns.push(match *name {
                "x" => Column::X,
                "y" => Column::Y,
                "z" => Column::Z,
                "red" | "green" | "blue" | "r" | "g" | "b" => Column::Color,
                "class" | "label" | "scalar_label" => Column::Label,
                _ => Column::Skip,
            }),
            ["property", ..] => {}
            ["end_header"] => break,
            _ => {
                return Err(Error::Parse {
                    line: header_lines,
                    msg: format!("unexpected header line `{line}`"),
                })
            }
        }
    }
    let count = vertex_count.ok_or_else(|| Error::Parse {
        line: header_lines,
        msg: "no vertex element".into(),
    })?;
    if !vertex_first {
        return Err(Error::Parse {
            line: header_lines,
            msg: "vertex element must come first".into(),
        });
    }
    let schema = Schema {
        columns,
        class_count,
    };
    schema.validate()?;
    // Vertex rows follow the header; anything after them belongs to other elements.
    let body: Vec<String> = lines.take(count).collect::<std::io::Result<_>>()?;
    if body.len() < count {
        return Err(Error::Parse {
            line: header_lines + body.len() + 1,
            msg: format!("expected {count} vertices, found {}", body.len()),
        });
    }
    let text = body.join("\n");
    parse_delimited(std::io::Cursor::new(text), None, &schema, header_lines)
}

/// Writes a cloud in the column layout of `schema`, followed by `extra`
/// named columns (one value per point each). PLY output is ASCII.
pub fn write_cloud<W: Write>(
    mut w: W,
    cloud: &PointCloud,
    format: Format,
    schema: &Schema,
    extra: &[(&str, &[f64])],
) -> Result<()> {
    if schema.feature_dim() != cloud.feature_dim() {
        return Err(Error::Schema(format!(
            "schema has {} feature columns, cloud has {}",
            schema.feature_dim(),
            cloud.feature_dim()
        )));
    }
    if schema.has_label() && cloud.labels().is_none() {
        return Err(Error::Schema("schema has a label column but the cloud is unlabeled".into()));
    }
    for (name, col) in extra {
        if col.len() != cloud.len() {
            return Err(Error::Shape(format!("extra column `{name}` has {} values", col.len())));
        }
    }
    let names = column_names(schema);
    let sep = if format == Format::Csv { "," } else { " " };
    match format {
        Format::PlyAscii => {
            writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", cloud.len())?;
            for (name, role) in names.iter().zip(&schema.columns) {
                let ty = match role {
                    Column::Color => "uchar",
                    Column::Label => "int",
                    _ => "double",
                };
                writeln!(w, "property {ty} {name}")?;
            }
            for (name, _) in extra {
                writeln!(w, "property double {name}")?;
            }
            writeln!(w, "end_header")?;
        }
        _ => {
            let mut header: Vec<String> = names;
            header.extend(extra.iter().map(|(n, _)| n.to_string()));
            writeln!(w, "# {}", header.join(sep))?;
        }
    }
    let mut row = String::new();
    for i in 0..cloud.len() {
        row.clear();
        let p = cloud.position(i);
        let mut f = cloud.feature(i).iter();
        for (k, role) in schema.columns.iter().enumerate() {
            if k > 0 {
                row.push_str(sep);
            }
            let cell = match role {
                Column::X => p[0].to_string(),
                Column::Y => p[1].to_string(),
                Column::Z => p[2].to_string(),
                Column::Feature => f.next().copied().unwrap_or(0.0).to_string(),
                Column::Color => {
                    let v = f.next().copied().unwrap_or(0.0);
                    ((v * 255.0).round().clamp(0.0, 255.0) as u8).to_string()
                }
                Column::Label => cloud.labels().map(|l| l[i]).unwrap_or(0).to_string(),
                Column::Skip => "0".to_string(),
            };
            row.push_str(&cell);
        }
        for (_, col) in extra {
            row.push_str(sep);
            row.push_str(&col[i].to_string());
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

fn column_names(schema: &Schema) -> Vec<String> {
    let mut colors = 0;
    let mut feats = 0;
    schema
        .columns
        .iter()
        .map(|c| match c {
            Column::X => "x".to_string(),
            Column::Y => "y".to_string(),
            Column::Z => "z".to_string(),
            Column::Color => {
                colors += 1;
                match ["red", "green", "blue"].get(colors - 1) {
                    Some(n) => n.to_string(),
                    None => format!("color{}", colors - 1),
                }
            }
            Column::Feature => {
                feats += 1;
                format!("f{}", feats - 1)
            }
            Column::Label => "class".to_string(),
            Column::Skip => "skip".to_string(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, format: Format, schema: &Schema) -> Result<PointCloud> {
        parse_cloud(std::io::Cursor::new(text), format, schema)
    }

    #[test]
    fn xyzrgb_label_line() {
        let c = parse("0 0 0 255 0 0 2\n", Format::Xyz, &Schema::xyz_rgb(3).with_label()).unwrap();
        assert_eq!(c.position(0), [0.0; 3]);
        assert_eq!(c.feature(0), &[1.0, 0.0, 0.0]);
        assert_eq!(c.labels().unwrap(), &[2]);
    }

    #[test]
    fn empty_stream_has_no_points() {
        let err = parse("# only a comment\n\n", Format::Xyz, &Schema::xyz(1)).unwrap_err();
        assert!(matches!(err, Error::NoPoints));
        assert_eq!(err.to_string(), "no points");
    }

    #[test]
    fn plain_xyz_has_no_features_or_labels() {
        let c = parse("0 0 0\n1 0 0\n2 0 0\n", Format::Xyz, &Schema::xyz(1)).unwrap();
        assert_eq!((c.len(), c.feature_dim()), (3, 0));
        assert!(c.labels().is_none());
    }

    #[test]
    fn csv_with_comments() {
        let text = "# x,y,z,class\n1.5, 2, 3, 1\n4,5,6,0 # trailing\n";
        let c = parse(text, Format::Csv, &Schema::parse_roles("xyzl", 2).unwrap()).unwrap();
        assert_eq!(c.position(0), [1.5, 2.0, 3.0]);
        assert_eq!(c.labels().unwrap(), &[1, 0]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("0 0 0\n0 zero 0\n", Format::Xyz, &Schema::xyz(1)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse("0 0 0\n\n0 0\n", Format::Xyz, &Schema::xyz(1)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn label_out_of_range_is_schema_error() {
        let err = parse("0 0 0 5\n", Format::Xyz, &Schema::xyz(3).with_label()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn ply_ascii_with_colors_and_label() {
        let text = "ply\nformat ascii 1.0\ncomment synthetic\nelement vertex 2\n\
                    property float x\nproperty float y\nproperty float z\n\
                    property uchar red\nproperty uchar green\nproperty uchar blue\n\
                    property int scalar_label\nelement face 0\nproperty list uchar int vertex_indices\n\
                    end_header\n0 0 0 255 0 0 1\n1 2 3 0 0 255 0\n";
        let c = parse(text, Format::PlyAscii, &Schema::xyz(2)).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.feature(1), &[0.0, 0.0, 1.0]);
        assert_eq!(c.labels().unwrap(), &[1, 0]);
    }

    #[test]
    fn ply_rejects_binary_and_bad_rows() {
        let bin = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n";
        assert!(parse(bin, Format::PlyAscii, &Schema::xyz(1)).is_err());
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n\
                     property float z\nend_header\n0 0 0\n";
        assert!(parse(short, Format::PlyAscii, &Schema::xyz(1)).is_err());
        let bad = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
                   property float z\nend_header\n0 0 q\n";
        let err = parse(bad, Format::PlyAscii, &Schema::xyz(1)).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 8, .. }), "{err}");
    }

    #[test]
    fn write_then_read_back() {
        let c = PointCloud::new(
            vec![[0.25, -1.0, 3.5], [1.0, 2.0, 3.0]],
            vec![1.0, 0.0, 0.2, 0.0, 1.0, 0.6],
            3,
            Some(vec![1, 0]),
            2,
        )
        .unwrap();
        let schema = Schema::xyz_rgb(2).with_label();
        for format in [Format::Xyz, Format::Csv, Format::PlyAscii] {
            let mut buf = Vec::new();
            write_cloud(&mut buf, &c, format, &schema, &[("tod", &[0.5, 0.25])]).unwrap();
            let mut read_schema = schema.clone();
            read_schema.columns.push(Column::Skip);
            let back = parse_cloud(std::io::Cursor::new(buf), format, &read_schema).unwrap();
            assert_eq!(back.positions(), c.positions());
            assert_eq!(back.labels(), c.labels());
            for (a, b) in back.features().iter().zip(c.features()) {
                assert!((a - b).abs() <= 0.5 / 255.0);
            }
        }
    }
}
