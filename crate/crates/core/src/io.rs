//! Cell tables, landmark files and the serialized outputs of a run.
//!
//! Cell tables are CSV with a header row. Which columns hold the id and the
//! centroid is configurable because segmentation tools export differently
//! named columns; every other column becomes a named feature.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{px_to_um, Point2D};
use crate::matching::{Match, MatchSet};

/// Imaging modality a table was segmented from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Modality {
    MxIF,
    HE,
    #[default]
    Unspecified,
    Other(String),
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::MxIF => f.write_str("mxif"),
            Modality::HE => f.write_str("he"),
            Modality::Unspecified => f.write_str("unspecified"),
            Modality::Other(name) => f.write_str(name),
        }
    }
}

impl FromStr for Modality {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "mxif" => Modality::MxIF,
            "he" | "h&e" | "hne" => Modality::HE,
            "" | "unspecified" => Modality::Unspecified,
            _ => Modality::Other(s.to_string()),
        })
    }
}

impl Serialize for Modality {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Modality {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub id: String,
    pub centroid: Point2D,
    pub features: BTreeMap<String, f64>,
    pub class_label: Option<String>,
}

impl CellRecord {
    pub fn new(id: impl Into<String>, centroid: Point2D) -> Self {
        Self {
            id: id.into(),
            centroid,
            features: BTreeMap::new(),
            class_label: None,
        }
    }

    pub fn with_feature(mut self, name: &str, value: f64) -> Self {
        self.features.insert(name.to_string(), value);
        self
    }

    pub fn feature(&self, name: &str) -> Option<f64> {
        self.features.get(name).copied()
    }
}

/// Ordered, validated list of cells from one modality; coordinates in μm.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTable {
    pub modality: Modality,
    /// Pixel size the coordinates were converted with, if they arrived in px.
    pub pixel_size: Option<f64>,
    cells: Vec<CellRecord>,
}

impl CellTable {
    /// Validates ids, centroids and the range-checked morphology features.
    pub fn new(modality: Modality, cells: Vec<CellRecord>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::EmptyInput("cell table has no cells"));
        }
        let mut seen = HashSet::with_capacity(cells.len());
        for cell in &cells {
            validate_cell(cell)?;
            if !seen.insert(cell.id.as_str()) {
                return Err(Error::DuplicateId(cell.id.clone()));
            }
        }
        Ok(Self {
            modality,
            pixel_size: None,
            cells,
        })
    }

    pub fn from_points(points: &[Point2D]) -> Result<Self> {
        let cells = points
            .iter()
            .enumerate()
            .map(|(i, p)| CellRecord::new(i.to_string(), *p))
            .collect();
        Self::new(Modality::Unspecified, cells)
    }

    pub fn cells(&self) -> &[CellRecord] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn positions(&self) -> Vec<Point2D> {
        self.cells.iter().map(|c| c.centroid).collect()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.cells.iter().map(|c| c.id.as_str())
    }

    /// Sorted union of feature names over all cells.
    pub fn feature_names(&self) -> Vec<String> {
        let names: BTreeSet<&String> = self.cells.iter().flat_map(|c| c.features.keys()).collect();
        names.into_iter().cloned().collect()
    }

    /// Same cells with every centroid passed through `f`.
    pub fn map_positions(&self, mut f: impl FnMut(Point2D) -> Point2D) -> CellTable {
        let cells = self
            .cells
            .iter()
            .map(|c| CellRecord {
                centroid: f(c.centroid),
                ..c.clone()
            })
            .collect();
        CellTable {
            modality: self.modality.clone(),
            pixel_size: self.pixel_size,
            cells,
        }
    }

    /// Keeps cells for which `keep` holds; errors if nothing is left.
    pub fn filter(&self, mut keep: impl FnMut(&CellRecord) -> bool) -> Result<CellTable> {
        let cells: Vec<_> = self.cells.iter().filter(|c| keep(c)).cloned().collect();
        if cells.is_empty() {
            return Err(Error::EmptyInput("filter removed every cell"));
        }
        Ok(CellTable {
            modality: self.modality.clone(),
            pixel_size: self.pixel_size,
            cells,
        })
    }

    pub fn into_cells(self) -> Vec<CellRecord> {
        self.cells
    }
}

fn validate_cell(cell: &CellRecord) -> Result<()> {
    if !cell.centroid.is_finite() {
        return Err(Error::InvalidInput(format!(
            "cell `{}` has a non-finite centroid",
            cell.id
        )));
    }
    for (name, &value) in &cell.features {
        let ok = match name.as_str() {
            "solidity" => value > 0.0 && value <= 1.0,
            "area" | "perimeter" | "min_diameter" | "max_diameter" => value > 0.0,
            _ => true,
        };
        if !ok || value.is_infinite() {
            return Err(Error::InvalidFeature {
                id: cell.id.clone(),
                name: name.clone(),
                value,
            });
        }
    }
    Ok(())
}

/// Lower-cases and collapses every run of non-alphanumerics to `_`.
///
/// `"Nucleus: Hematoxylin OD mean"` becomes `"nucleus_hematoxylin_od_mean"`.
pub fn normalize_feature_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.chars() {
        if ch.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(ch.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateUnit {
    Px,
    #[default]
    Um,
}

impl FromStr for CoordinateUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "px" | "pixel" | "pixels" => Ok(CoordinateUnit::Px),
            "um" | "μm" | "micron" | "microns" => Ok(CoordinateUnit::Um),
            other => Err(Error::Config(format!("unknown coordinate unit `{other}`"))),
        }
    }
}

/// Column mapping for a cell-table CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    pub id_column: String,
    pub x_column: String,
    pub y_column: String,
    /// Optional column carrying the class label; absent columns are fine.
    pub label_column: String,
    pub unit: CoordinateUnit,
    /// μm per pixel, required when `unit` is px.
    pub pixel_size: Option<f64>,
    /// Normalized feature name → canonical name.
    pub feature_aliases: BTreeMap<String, String>,
    /// Columns that are neither coordinates nor features.
    pub ignore_columns: Vec<String>,
    pub modality: Modality,
    /// Abort on the first bad row instead of collecting row errors.
    pub strict: bool,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            id_column: "cell_id".into(),
            x_column: "x".into(),
            y_column: "y".into(),
            label_column: "class_label".into(),
            unit: CoordinateUnit::Um,
            pixel_size: None,
            feature_aliases: BTreeMap::new(),
            ignore_columns: Vec::new(),
            modality: Modality::Unspecified,
            strict: true,
        }
    }
}

impl SchemaConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn conversion(&self) -> Result<Option<f64>> {
        match self.unit {
            CoordinateUnit::Um => Ok(None),
            CoordinateUnit::Px => match self.pixel_size {
                Some(ps) if ps > 0.0 && ps.is_finite() => Ok(Some(ps)),
                Some(ps) => Err(Error::InvalidPixelSize(ps)),
                None => Err(Error::Config(
                    "pixel_size is required when coordinates are in px".into(),
                )),
            },
        }
    }

    fn canonical_feature(&self, header: &str) -> String {
        let norm = normalize_feature_name(header);
        self.feature_aliases
            .iter()
            .find(|(alias, _)| normalize_feature_name(alias) == norm)
            .map(|(_, canonical)| normalize_feature_name(canonical))
            .unwrap_or(norm)
    }
}

/// A row that was rejected during lenient ingest.
#[derive(Debug)]
pub struct RowError {
    pub line: u64,
    pub error: Error,
}

/// Result of lenient ingest: every input row is either in `table` or in
/// `rejected`.
#[derive(Debug)]
pub struct Ingest {
    pub table: CellTable,
    pub rejected: Vec<RowError>,
    pub rows_read: usize,
}

pub fn read_cell_table(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<CellTable> {
    let strict = SchemaConfig {
        strict: true,
        ..schema.clone()
    };
    Ok(ingest_cell_table(path, &strict)?.table)
}

pub fn ingest_cell_table(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<Ingest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_cell_table_from_reader(file, schema)
}

pub fn ingest_cell_table_from_reader<R: Read>(reader: R, schema: &SchemaConfig) -> Result<Ingest> {
    let to_um = schema.conversion()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect::<Vec<_>>();

    let find = |name: &str| headers.iter().position(|h| h == name);
    let id_col = find(&schema.id_column).ok_or_else(|| Error::SchemaError {
        column: schema.id_column.clone(),
    })?;
    let x_col = find(&schema.x_column).ok_or_else(|| Error::SchemaError {
        column: schema.x_column.clone(),
    })?;
    let y_col = find(&schema.y_column).ok_or_else(|| Error::SchemaError {
        column: schema.y_column.clone(),
    })?;
    let label_col = find(&schema.label_column);

    let mut feature_cols = Vec::new();
    let mut feature_seen = HashSet::new();
    for (i, h) in headers.iter().enumerate() {
        if i == id_col || i == x_col || i == y_col || Some(i) == label_col {
            continue;
        }
        if schema.ignore_columns.iter().any(|c| c == h) {
            continue;
        }
        let name = schema.canonical_feature(h);
        if name.is_empty() {
            continue;
        }
        if !feature_seen.insert(name.clone()) {
            return Err(Error::Config(format!(
                "columns map to the same feature name `{name}`"
            )));
        }
        feature_cols.push((i, name));
    }

    let mut cells = Vec::new();
    let mut rejected = Vec::new();
    let mut ids = HashSet::new();
    let mut rows_read = 0usize;
    for (row_idx, record) in rdr.records().enumerate() {
        // Header is line 1.
        let line = row_idx as u64 + 2;
        rows_read += 1;
        let parsed = record
            .map_err(|e| csv_error(e, line))
            .and_then(|rec| {
                parse_row(
                    &rec,
                    line,
                    id_col,
                    x_col,
                    y_col,
                    label_col,
                    &feature_cols,
                    to_um,
                )
            })
            .and_then(|cell| {
                validate_cell(&cell)?;
                if ids.contains(&cell.id) {
                    return Err(Error::DuplicateId(cell.id.clone()));
                }
                Ok(cell)
            });
        match parsed {
            Ok(cell) => {
                ids.insert(cell.id.clone());
                cells.push(cell);
            }
            Err(error) if !schema.strict => rejected.push(RowError { line, error }),
            Err(error) => return Err(error),
        }
    }

    let mut table = CellTable::new(schema.modality.clone(), cells)?;
    table.pixel_size = to_um;
    Ok(Ingest {
        table,
        rejected,
        rows_read,
    })
}

#[allow(clippy::too_many_arguments)]
fn parse_row(
    rec: &csv::StringRecord,
    line: u64,
    id_col: usize,
    x_col: usize,
    y_col: usize,
    label_col: Option<usize>,
    feature_cols: &[(usize, String)],
    to_um: Option<f64>,
) -> Result<CellRecord> {
    let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
    let id = field(id_col);
    if id.is_empty() {
        return Err(Error::ParseError {
            line,
            message: "empty cell id".into(),
        });
    }
    let coord = |i: usize, what: &str| -> Result<f64> {
        let raw = field(i);
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::ParseError {
                line,
                message: format!("{what} coordinate `{raw}` is not a finite number"),
            }),
        }
    };
    let mut centroid = Point2D::new(coord(x_col, "x")?, coord(y_col, "y")?);
    if let Some(ps) = to_um {
        centroid = px_to_um(centroid, ps)?;
    }
    let mut features = BTreeMap::new();
    for (i, name) in feature_cols {
        let raw = field(*i);
        if raw.is_empty() {
            continue;
        }
        let value: f64 = raw.parse().map_err(|_| Error::ParseError {
            line,
            message: format!("feature `{name}` value `{raw}` is not numeric"),
        })?;
        // QuPath writes NaN for unmeasured features.
        if value.is_nan() {
            continue;
        }
        features.insert(name.clone(), value);
    }
    let class_label = label_col
        .map(field)
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    Ok(CellRecord {
        id: id.to_string(),
        centroid,
        features,
        class_label,
    })
}

fn csv_error(e: csv::Error, line: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(line);
    Error::ParseError {
        line,
        message: e.to_string(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn flush(mut w: impl Write, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_write_error(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("csv write failed: {other:?}")),
    }
}

/// Writes a table in μm with columns `cell_id,x,y,<features…>[,class_label]`.
pub fn write_cell_table(table: &CellTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let w = create(path)?;
    let w = write_cell_table_to(table, w).map_err(|e| csv_write_error(e, path))?;
    flush(w, path)
}

pub fn write_cell_table_to<W: Write>(
    table: &CellTable,
    w: W,
) -> std::result::Result<W, csv::Error> {
    let features = table.feature_names();
    let has_labels = table.cells().iter().any(|c| c.class_label.is_some());
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["cell_id".to_string(), "x".into(), "y".into()];
    header.extend(features.iter().cloned());
    if has_labels {
        header.push("class_label".into());
    }
    wtr.write_record(&header)?;
    for cell in table.cells() {
        let mut row = vec![
            cell.id.clone(),
            cell.centroid.x.to_string(),
            cell.centroid.y.to_string(),
        ];
        for name in &features {
            row.push(
                cell.feature(name)
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
            );
        }
        if has_labels {
            row.push(cell.class_label.clone().unwrap_or_default());
        }
        wtr.write_record(&row)?;
    }
    wtr.into_inner().map_err(|e| e.into_error().into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkPair {
    pub source: Point2D,
    pub target: Point2D,
}

/// Annotated corresponding points, source frame → target frame, in μm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkSet {
    pub pairs: Vec<LandmarkPair>,
}

impl LandmarkSet {
    pub const MIN_PAIRS: usize = 2;

    pub fn new(pairs: Vec<LandmarkPair>) -> Result<Self> {
        if pairs.len() < Self::MIN_PAIRS {
            return Err(Error::TooFewLandmarks {
                needed: Self::MIN_PAIRS,
                got: pairs.len(),
            });
        }
        if pairs
            .iter()
            .any(|p| !(p.source.is_finite() && p.target.is_finite()))
        {
            return Err(Error::InvalidInput(
                "landmark coordinates must be finite".into(),
            ));
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct LandmarkRow {
    src_x: f64,
    src_y: f64,
    tgt_x: f64,
    tgt_y: f64,
}

pub fn read_landmarks(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_landmarks_from_reader(file)
}

pub fn read_landmarks_from_reader<R: Read>(reader: R) -> Result<LandmarkSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    for col in ["src_x", "src_y", "tgt_x", "tgt_y"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::SchemaError { column: col.into() });
        }
    }
    let mut pairs = Vec::new();
    for (i, row) in rdr.deserialize::<LandmarkRow>().enumerate() {
        let row = row.map_err(|e| csv_error(e, i as u64 + 2))?;
        pairs.push(LandmarkPair {
            source: Point2D::new(row.src_x, row.src_y),
            target: Point2D::new(row.tgt_x, row.tgt_y),
        });
    }
    LandmarkSet::new(pairs)
}

pub fn write_landmarks(landmarks: &LandmarkSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_writer(create(path)?);
    for p in &landmarks.pairs {
        wtr.serialize(LandmarkRow {
            src_x: p.source.x,
            src_y: p.source.y,
            tgt_x: p.target.x,
            tgt_y: p.target.y,
        })
        .map_err(|e| csv_write_error(e, path))?;
    }
    if landmarks.pairs.is_empty() {
        wtr.write_record(["src_x", "src_y", "tgt_x", "tgt_y"])
            .map_err(|e| csv_write_error(e, path))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Writes `src_id,tgt_id,score`; an empty set yields the header only.
pub fn write_matches(matches: &MatchSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let w = create(path)?;
    let w = write_matches_to(matches, w).map_err(|e| csv_write_error(e, path))?;
    flush(w, path)
}

pub fn write_matches_to<W: Write>(matches: &MatchSet, w: W) -> std::result::Result<W, csv::Error> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["src_id", "tgt_id", "score"])?;
    for m in matches.iter() {
        wtr.write_record([m.src_id.as_str(), m.tgt_id.as_str(), &m.score.to_string()])?;
    }
    wtr.into_inner().map_err(|e| e.into_error().into())
}

pub fn read_matches(path: impl AsRef<Path>) -> Result<MatchSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_matches_from_reader(file)
}

pub fn read_matches_from_reader<R: Read>(reader: R) -> Result<MatchSet> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Match>().enumerate() {
        out.push(row.map_err(|e| csv_error(e, i as u64 + 2))?);
    }
    MatchSet::new(out)
}

/// Serializes any report as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    flush(w, path)
}

pub fn write_report<T: Serialize + ?Sized>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    write_json(report, path)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ingest(csv: &str, schema: &SchemaConfig) -> Result<Ingest> {
        ingest_cell_table_from_reader(csv.as_bytes(), schema)
    }

    #[test]
    fn reads_micron_table_unchanged() {
        let csv = "cell_id,x,y,Perimeter,Solidity\na,1.5,2.5,30,0.9\nb,3,4,31,0.8\nc,5,6,32,0.95\n";
        let t = ingest(csv, &SchemaConfig::default()).unwrap().table;
        assert_eq!(t.len(), 3);
        assert_eq!(t.cells()[0].centroid, Point2D::new(1.5, 2.5));
        assert_eq!(t.cells()[2].id, "c");
        assert_eq!(t.cells()[1].feature("solidity"), Some(0.8));
        assert_eq!(t.cells()[1].feature("perimeter"), Some(31.0));
    }

    #[test]
    fn converts_pixels() {
        let csv = "cell_id,x,y\na,1000,2000\n";
        let schema = SchemaConfig {
            unit: CoordinateUnit::Px,
            pixel_size: Some(0.325),
            ..Default::default()
        };
        let t = ingest(csv, &schema).unwrap().table;
        let p = t.cells()[0].centroid;
        assert!((p.x - 325.0).abs() < 1e-9 && (p.y - 650.0).abs() < 1e-9);
        assert_eq!(t.pixel_size, Some(0.325));

        let missing = SchemaConfig {
            unit: CoordinateUnit::Px,
            ..Default::default()
        };
        assert!(matches!(ingest(csv, &missing), Err(Error::Config(_))));
    }

    #[test]
    fn bad_coordinate_names_line() {
        let csv = "cell_id,x,y\na,1,2\nb,abc,3\n";
        match ingest(csv, &SchemaConfig::default()) {
            Err(Error::ParseError { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_duplicates() {
        let schema = SchemaConfig::default();
        assert!(matches!(
            ingest("id,x,y\na,1,2\n", &schema),
            Err(Error::SchemaError { column }) if column == "cell_id"
        ));
        assert!(matches!(
            ingest("cell_id,x,y\na,1,2\na,3,4\n", &schema),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn lenient_ingest_accounts_for_every_row() {
        let csv = "cell_id,x,y,solidity\na,1,2,0.5\nb,x,2,0.5\nc,1,2,1.5\na,4,4,0.5\nd,5,5,\n";
        let schema = SchemaConfig {
            strict: false,
            ..Default::default()
        };
        let ing = ingest(csv, &schema).unwrap();
        assert_eq!(ing.rows_read, 5);
        assert_eq!(ing.table.len() + ing.rejected.len(), ing.rows_read);
        assert_eq!(ing.table.len(), 2);
        assert_eq!(
            ing.rejected.iter().map(|r| r.line).collect::<Vec<_>>(),
            [3, 4, 5]
        );
        assert!(ing.table.cells()[1].feature("solidity").is_none());
    }

    #[test]
    fn aliases_map_modality_specific_names() {
        let schema = SchemaConfig {
            feature_aliases: [(
                "Nucleus: Hematoxylin OD mean".to_string(),
                "nucleus_stain_mean".to_string(),
            )]
            .into_iter()
            .collect(),
            ..Default::default()
        };
        let csv = "cell_id,x,y,Nucleus: Hematoxylin OD mean,Image\na,1,2,0.4,\n";
        let t = ingest(csv, &schema).unwrap().table;
        assert_eq!(t.cells()[0].feature("nucleus_stain_mean"), Some(0.4));
        assert_eq!(
            normalize_feature_name("Nucleus: DAPI mean"),
            "nucleus_dapi_mean"
        );
        assert_eq!(normalize_feature_name("  Area µm^2 "), "area_µm_2");
    }

    #[test]
    fn landmark_counts() {
        let header = "src_x,src_y,tgt_x,tgt_y\n";
        let eight: String = (0..8)
            .map(|i| format!("{i},{i},{},{}\n", i + 1, i + 2))
            .collect();
        let set = read_landmarks_from_reader(format!("{header}{eight}").as_bytes()).unwrap();
        assert_eq!(set.len(), 8);
        assert_eq!(set.pairs[3].target, Point2D::new(4.0, 5.0));
        let two =
            read_landmarks_from_reader(format!("{header}0,0,1,1\n2,2,3,3\n").as_bytes()).unwrap();
        assert_eq!(two.len(), 2);
        assert!(matches!(
            read_landmarks_from_reader(format!("{header}0,0,1,1\n").as_bytes()),
            Err(Error::TooFewLandmarks { got: 1, .. })
        ));
    }

    #[test]
    fn empty_matches_write_header_only() {
        let bytes = write_matches_to(&MatchSet::default(), Vec::new()).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "src_id,tgt_id,score\n");
    }

    #[test]
    fn match_roundtrip_and_determinism() {
        let set = MatchSet::new(
            (0..100)
                .map(|i| Match::new(format!("s{i}"), format!("t{}", 99 - i), (i as f64) / 99.0))
                .collect(),
        )
        .unwrap();
        let a = write_matches_to(&set, Vec::new()).unwrap();
        let b = write_matches_to(&set, Vec::new()).unwrap();
        assert_eq!(a, b);
        let back = read_matches_from_reader(a.as_slice()).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err =
            write_matches(&MatchSet::default(), "/nonexistent-dir/x/matches.csv").unwrap_err();
        assert_eq!(err.kind(), "IoError");
    }

    proptest! {
        #[test]
        fn cell_table_roundtrip(
            rows in prop::collection::vec((-1e5f64..1e5, -1e5f64..1e5, 0.01f64..1.0, 1e-3f64..1e3), 1..40)
        ) {
            let cells: Vec<_> = rows.iter().enumerate().map(|(i, &(x, y, sol, per))| {
                CellRecord::new(format!("c{i}"), Point2D::new(x, y))
                    .with_feature("solidity", sol)
                    .with_feature("perimeter", per)
            }).collect();
            let table = CellTable::new(Modality::Unspecified, cells).unwrap();
            let bytes = write_cell_table_to(&table, Vec::new()).unwrap();
            let back = ingest_cell_table_from_reader(bytes.as_slice(), &SchemaConfig::default()).unwrap().table;
            prop_assert_eq!(back, table);
        }
    }
}
