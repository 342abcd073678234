//! Drivable-area annotation ingestion.
//!
//! Reads BDD-style label files (a JSON array of frames) or the normalized
//! format written by [`write_normalized`], keeps only `drivable area` polygons
//! and maps them onto the two lane classes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::de::IgnoredAny;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Frame size used when an annotation entry carries no dimensions (BDD frames are 1280x720).
pub const DEFAULT_DIMS: (u32, u32) = (1280, 720);

const DRIVABLE_CATEGORY: &str = "drivable area";

/// Drivable-area class: the ego vehicle's own lane or an adjacent lane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum LaneClass {
    Direct = 1,
    Alternative = 2,
}

impl LaneClass {
    pub const ALL: [LaneClass; 2] = [LaneClass::Direct, LaneClass::Alternative];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            LaneClass::Direct => "direct",
            LaneClass::Alternative => "alternative",
        }
    }

    /// Exact match on the BDD `areaType` string.
    pub fn from_area_type(area_type: &str) -> Option<Self> {
        match area_type {
            "direct" => Some(LaneClass::Direct),
            "alternative" => Some(LaneClass::Alternative),
            _ => None,
        }
    }
}

impl From<LaneClass> for u8 {
    fn from(c: LaneClass) -> u8 {
        c.id()
    }
}

impl TryFrom<u8> for LaneClass {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(LaneClass::Direct),
            2 => Ok(LaneClass::Alternative),
            other => Err(format!("class_id must be 1 or 2, got {other}")),
        }
    }
}

impl fmt::Display for LaneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Trim, lowercase and collapse internal whitespace runs into single hyphens.
pub fn normalize_tag(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

macro_rules! condition_tag {
    (
        $(#[$meta:meta])*
        $name:ident { $($variant:ident => $tag:literal $(| $alias:literal)*),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant,)+
            #[default]
            Undefined,
        }

        impl $name {
            /// Every tag, `Undefined` last.
            pub const ALL: &'static [$name] = &[$($name::$variant,)+ $name::Undefined];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $tag,)+
                    $name::Undefined => "undefined",
                }
            }

            /// Normalizes `raw`; anything unrecognized becomes `Undefined`.
            pub fn parse(raw: &str) -> Self {
                match normalize_tag(raw).as_str() {
                    $($tag $(| $alias)* => $name::$variant,)+
                    _ => $name::Undefined,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

condition_tag! {
    Weather {
        Clear => "clear",
        Rainy => "rainy",
        Snowy => "snowy",
        Overcast => "overcast",
        PartlyCloudy => "partly-cloudy",
        Foggy => "foggy",
    }
}

condition_tag! {
    /// BDD's `scene` attribute, reported as the "location" axis.
    Scene {
        Residential => "residential",
        CityStreet => "city-street",
        Highway => "highway",
        ParkingLot => "parking-lot",
        Tunnel => "tunnel",
        GasStation => "gas-station" | "gas-stations",
    }
}

condition_tag! {
    TimeOfDay {
        Daytime => "daytime",
        Night => "night",
        DawnDusk => "dawn-dusk" | "dawn/dusk" | "dusk/dawn",
    }
}

/// One of the three condition axes used for stratified reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Weather,
    Scene,
    Timeofday,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Weather, Axis::Scene, Axis::Timeofday];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Weather => "weather",
            Axis::Scene => "scene",
            Axis::Timeofday => "timeofday",
        }
    }
}

/// Normalized (weather, scene, time of day) triple of a frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConditionKey {
    pub weather: Weather,
    pub scene: Scene,
    pub timeofday: TimeOfDay,
}

impl ConditionKey {
    pub fn from_raw(weather: Option<&str>, scene: Option<&str>, timeofday: Option<&str>) -> Self {
        Self {
            weather: weather.map(Weather::parse).unwrap_or_default(),
            scene: scene.map(Scene::parse).unwrap_or_default(),
            timeofday: timeofday.map(TimeOfDay::parse).unwrap_or_default(),
        }
    }

    pub fn tag(&self, axis: Axis) -> &'static str {
        match axis {
            Axis::Weather => self.weather.as_str(),
            Axis::Scene => self.scene.as_str(),
            Axis::Timeofday => self.timeofday.as_str(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolygonLabel {
    pub class_id: LaneClass,
    pub vertices: Vec<Point>,
}

impl PolygonLabel {
    pub fn new(class_id: LaneClass, vertices: Vec<Point>) -> Self {
        Self { class_id, vertices }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub conditions: ConditionKey,
    pub labels: Vec<PolygonLabel>,
}

impl ImageRecord {
    pub fn n_labels(&self, class: LaneClass) -> usize {
        self.labels.iter().filter(|l| l.class_id == class).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    #[default]
    Other,
}

impl Split {
    /// Guesses the split from a file name such as `bdd100k_labels_images_val.json`.
    pub fn infer_from_name(name: &str) -> Self {
        let lower = name.to_lowercase();
        if lower.contains("train") {
            Split::Train
        } else if lower.contains("val") {
            Split::Val
        } else {
            Split::Other
        }
    }
}

/// Immutable, image-id-sorted collection of annotated frames.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetIndex {
    records: Vec<ImageRecord>,
    source_split: Split,
}

impl DatasetIndex {
    /// Sorts by `image_id`; duplicate ids are a schema violation.
    pub fn new(mut records: Vec<ImageRecord>, source_split: Split) -> Result<Self> {
        records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        if let Some(pair) = records.windows(2).find(|w| w[0].image_id == w[1].image_id) {
            return Err(Error::SchemaViolation {
                location: format!("image `{}`", pair[0].image_id),
                message: "duplicate image name".to_string(),
            });
        }
        Ok(Self { records, source_split })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn source_split(&self) -> Split {
        self.source_split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.source_split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records
            .binary_search_by(|r| r.image_id.as_str().cmp(image_id))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }

    /// Records grouped by their tag on `axis`.
    pub fn group_by(&self, axis: Axis) -> BTreeMap<&'static str, Vec<&ImageRecord>> {
        let mut groups: BTreeMap<&'static str, Vec<&ImageRecord>> = BTreeMap::new();
        for record in &self.records {
            groups.entry(stratify_key(record).tag(axis)).or_default().push(record);
        }
        groups
    }
}

/// Tally of annotation content that was skipped or approximated during parsing.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParseWarnings {
    /// Polygons with fewer than three vertices.
    pub degenerate_polygons: usize,
    /// Polygons containing curve control points, kept as plain vertices.
    pub curved_polygons: usize,
    /// Drivable labels with no `poly2d` geometry.
    pub unsupported_geometry: usize,
    /// Drivable labels whose `areaType` is neither `direct` nor `alternative`.
    pub unknown_area_type: usize,
    /// Images that had drivable labels but lost all of them to rejection.
    pub fully_rejected_ids: BTreeSet<String>,
}

impl ParseWarnings {
    pub fn total(&self) -> usize {
        self.degenerate_polygons + self.curved_polygons + self.unsupported_geometry + self.unknown_area_type
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DropReport {
    pub total_in: usize,
    pub kept: usize,
    pub dropped_ids: Vec<String>,
    pub drop_fraction: f64,
    /// Dropped images whose drivable labels were all rejected as degenerate;
    /// the remainder had no drivable annotation at all.
    pub dropped_after_rejection: usize,
}

impl DropReport {
    /// Report for `total_in` frames of which `dropped_ids` were removed.
    pub fn new(total_in: usize, dropped_ids: Vec<String>) -> Self {
        let drop_fraction = if total_in == 0 {
            0.0
        } else {
            dropped_ids.len() as f64 / total_in as f64
        };
        Self {
            total_in,
            kept: total_in - dropped_ids.len(),
            dropped_ids,
            drop_fraction,
            dropped_after_rejection: 0,
        }
    }

    /// Fills in [`DropReport::dropped_after_rejection`] from the parse tally.
    pub fn attribute_rejections(&mut self, warnings: &ParseWarnings) {
        self.dropped_after_rejection = self
            .dropped_ids
            .iter()
            .filter(|id| warnings.fully_rejected_ids.contains(*id))
            .count();
    }

    /// Drop fraction counting only frames that never had a drivable annotation.
    pub fn unlabeled_fraction(&self) -> f64 {
        if self.total_in == 0 {
            0.0
        } else {
            (self.dropped_ids.len() - self.dropped_after_rejection) as f64 / self.total_in as f64
        }
    }
}

// --- input schemas -------------------------------------------------------

#[derive(Deserialize)]
struct BddFrame {
    name: String,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
    #[serde(default)]
    attributes: Option<BddFrameAttributes>,
    #[serde(default)]
    labels: Option<Vec<BddLabel>>,
}

#[derive(Deserialize, Default)]
struct BddFrameAttributes {
    #[serde(default)]
    weather: Option<String>,
    #[serde(default)]
    scene: Option<String>,
    #[serde(default)]
    timeofday: Option<String>,
}

#[derive(Deserialize)]
struct BddLabel {
    #[serde(default)]
    category: Option<String>,
    #[serde(default)]
    attributes: Option<BddLabelAttributes>,
    #[serde(default)]
    poly2d: Option<Vec<BddPoly>>,
}

#[derive(Deserialize)]
struct BddLabelAttributes {
    #[serde(default, rename = "areaType")]
    area_type: Option<String>,
}

#[derive(Deserialize)]
struct BddPoly {
    vertices: Vec<Point>,
    /// One character per vertex: `L` for line vertices, `C` for curve control points.
    #[serde(default)]
    types: Option<String>,
    #[serde(default, rename = "closed")]
    _closed: Option<IgnoredAny>,
}

#[derive(Serialize, Deserialize)]
struct NormalizedFile<R> {
    records: Vec<R>,
}

#[derive(Deserialize)]
struct NormalizedRecordIn {
    image_id: String,
    width: u32,
    height: u32,
    #[serde(default)]
    weather: Option<String>,
    #[serde(default)]
    scene: Option<String>,
    #[serde(default)]
    timeofday: Option<String>,
    #[serde(default)]
    polygons: Vec<PolygonLabel>,
}

#[derive(Serialize)]
struct NormalizedRecordOut<'a> {
    image_id: &'a str,
    width: u32,
    height: u32,
    weather: &'static str,
    scene: &'static str,
    timeofday: &'static str,
    polygons: &'a [PolygonLabel],
}

fn map_json_error(err: serde_json::Error) -> Error {
    use serde_json::error::Category;
    match err.classify() {
        Category::Io => Error::Io(err.into()),
        Category::Syntax | Category::Eof => Error::MalformedInput {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        },
        Category::Data => Error::SchemaViolation {
            location: format!("line {}, column {}", err.line(), err.column()),
            message: err.to_string(),
        },
    }
}

fn schema_error(entry: usize, name: &str, message: impl Into<String>) -> Error {
    Error::SchemaViolation {
        location: format!("entry {entry} (`{name}`)"),
        message: message.into(),
    }
}

fn check_dims(entry: usize, name: &str, width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(schema_error(
            entry,
            name,
            format!("image size {width}x{height} is not positive"),
        ));
    }
    Ok(())
}

/// Adds `vertices` as a label unless it is degenerate.
fn push_polygon(
    labels: &mut Vec<PolygonLabel>,
    warnings: &mut ParseWarnings,
    class_id: LaneClass,
    vertices: Vec<Point>,
) -> bool {
    if vertices.len() < 3 || !vertices.iter().all(Point::is_finite) {
        warnings.degenerate_polygons += 1;
        return false;
    }
    labels.push(PolygonLabel::new(class_id, vertices));
    true
}

fn parse_bdd(raw: &[u8], default_dims: (u32, u32), warnings: &mut ParseWarnings) -> Result<Vec<ImageRecord>> {
    let frames: Vec<BddFrame> = serde_json::from_slice(raw).map_err(map_json_error)?;
    let mut records = Vec::with_capacity(frames.len());
    for (entry, frame) in frames.into_iter().enumerate() {
        let width = frame.width.unwrap_or(default_dims.0);
        let height = frame.height.unwrap_or(default_dims.1);
        check_dims(entry, &frame.name, width, height)?;
        let attrs = frame.attributes.unwrap_or_default();
        let conditions = ConditionKey::from_raw(
            attrs.weather.as_deref(),
            attrs.scene.as_deref(),
            attrs.timeofday.as_deref(),
        );

        let mut labels = Vec::new();
        let mut drivable_seen = false;
        for label in frame.labels.unwrap_or_default() {
            if label.category.as_deref() != Some(DRIVABLE_CATEGORY) {
                continue;
            }
            drivable_seen = true;
            let area_type = label.attributes.and_then(|a| a.area_type);
            let Some(class_id) = area_type.as_deref().and_then(LaneClass::from_area_type) else {
                warnings.unknown_area_type += 1;
                continue;
            };
            let polys = label.poly2d.unwrap_or_default();
            if polys.is_empty() {
                warnings.unsupported_geometry += 1;
                continue;
            }
            for poly in polys {
                if push_polygon(&mut labels, warnings, class_id, poly.vertices)
                    && poly.types.as_deref().is_some_and(|t| t.contains(['C', 'c']))
                {
                    warnings.curved_polygons += 1;
                }
            }
        }
        if drivable_seen && labels.is_empty() {
            warnings.fully_rejected_ids.insert(frame.name.clone());
        }
        records.push(ImageRecord {
            image_id: frame.name,
            width,
            height,
            conditions,
            labels,
        });
    }
    Ok(records)
}

fn parse_normalized(raw: &[u8], warnings: &mut ParseWarnings) -> Result<Vec<ImageRecord>> {
    let file: NormalizedFile<NormalizedRecordIn> = serde_json::from_slice(raw).map_err(map_json_error)?;
    let mut records = Vec::with_capacity(file.records.len());
    for (entry, rec) in file.records.into_iter().enumerate() {
        check_dims(entry, &rec.image_id, rec.width, rec.height)?;
        let mut labels = Vec::with_capacity(rec.polygons.len());
        let had_polygons = !rec.polygons.is_empty();
        for poly in rec.polygons {
            push_polygon(&mut labels, warnings, poly.class_id, poly.vertices);
        }
        if had_polygons && labels.is_empty() {
            warnings.fully_rejected_ids.insert(rec.image_id.clone());
        }
        records.push(ImageRecord {
            conditions: ConditionKey::from_raw(rec.weather.as_deref(), rec.scene.as_deref(), rec.timeofday.as_deref()),
            image_id: rec.image_id,
            width: rec.width,
            height: rec.height,
            labels,
        });
    }
    Ok(records)
}

/// Parses a BDD label file (top-level array) or a normalized file (top-level
/// object with `records`).
///
/// Non-drivable categories are skipped silently; rejected or approximated
/// geometry is counted in the returned [`ParseWarnings`]. Frames without size
/// information get `default_dims`.
pub fn parse_labels(raw: &[u8], default_dims: (u32, u32)) -> Result<(DatasetIndex, ParseWarnings)> {
    let mut warnings = ParseWarnings::default();
    let first = raw.iter().position(|b| !b.is_ascii_whitespace()).map(|i| raw[i]);
    let records = match first {
        Some(b'{') => parse_normalized(raw, &mut warnings)?,
        Some(b'[') => parse_bdd(raw, default_dims, &mut warnings)?,
        _ => {
            // Let serde_json produce the positioned syntax error.
            let err = serde_json::from_slice::<IgnoredAny>(raw)
                .err()
                .map(map_json_error)
                .unwrap_or_else(|| Error::SchemaViolation {
                    location: "document root".to_string(),
                    message: "expected a JSON array of frames or an object with `records`".to_string(),
                });
            return Err(err);
        }
    };
    if warnings.total() > 0 {
        log::warn!(
            "annotation parse: {} degenerate, {} curved, {} without polygons, {} unknown area type",
            warnings.degenerate_polygons,
            warnings.curved_polygons,
            warnings.unsupported_geometry,
            warnings.unknown_area_type
        );
    }
    Ok((DatasetIndex::new(records, Split::Other)?, warnings))
}

/// Keeps the frames with at least one drivable polygon.
pub fn filter_drivable(index: DatasetIndex) -> (DatasetIndex, DropReport) {
    let split = index.source_split;
    let total_in = index.records.len();
    let (kept, dropped): (Vec<_>, Vec<_>) = index.records.into_iter().partition(|r| !r.labels.is_empty());
    let report = DropReport::new(total_in, dropped.into_iter().map(|r| r.image_id).collect());
    (
        DatasetIndex {
            records: kept,
            source_split: split,
        },
        report,
    )
}

pub fn stratify_key(record: &ImageRecord) -> ConditionKey {
    record.conditions
}

/// Writes the minified normalized annotation file and returns the record count.
pub fn write_normalized<W: Write>(index: &DatasetIndex, mut sink: W) -> Result<usize> {
    let records: Vec<NormalizedRecordOut<'_>> = index
        .records
        .iter()
        .map(|r| NormalizedRecordOut {
            image_id: &r.image_id,
            width: r.width,
            height: r.height,
            weather: r.conditions.weather.as_str(),
            scene: r.conditions.scene.as_str(),
            timeofday: r.conditions.timeofday.as_str(),
            polygons: &r.labels,
        })
        .collect();
    serde_json::to_writer(&mut sink, &NormalizedFile { records }).map_err(map_json_error)?;
    sink.flush()?;
    Ok(index.records.len())
}
