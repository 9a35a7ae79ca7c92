//! Clinical annotations: 2D tracked contours, 3D surface meshes and sparse
//! markers, and their conversion into label masks, strain curves and
//! volume curves.

mod contour;
mod mesh;

pub use contour::{
    arc_length, is_simple, point_in_polygon, rasterize_contours, segmental_strain, strain_curve,
    LABEL_BACKGROUND, LABEL_CAVITY, LABEL_MYOCARDIUM,
};
pub use mesh::{
    box_mesh, check_closed, ellipsoid_mesh, icosphere, mesh_volume, volume_curve, voxelize_mesh,
    BeatExtrema, MeshVolume, VolumeCurve,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("contour needs at least 3 vertices, found {0}")]
    TooFewVertices(usize),
    #[error("contour must be closed")]
    NotClosed,
    #[error("self-intersecting contour")]
    SelfIntersecting,
    #[error("epicardial contour does not enclose the endocardial contour")]
    EpiNotEnclosing,
    #[error("vertex count mismatch: frame {frame} has {found}, reference has {expected}")]
    VertexCountMismatch {
        frame: usize,
        expected: usize,
        found: usize,
    },
    #[error("open mesh: edge ({0}, {1}) has no opposite")]
    OpenMesh(u32, u32),
    #[error("inconsistent winding at edge ({0}, {1})")]
    InconsistentWinding(u32, u32),
    #[error("non-manifold edge ({0}, {1})")]
    NonManifold(u32, u32),
    #[error("mesh exceeds grid bounds")]
    OutOfBounds,
    #[error("invalid annotation: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chamber {
    Lv,
    La,
    Rv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Endocardial,
    Epicardial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum View {
    A2c,
    A4c,
    Alax,
}

/// Polygon or polyline in physical `(x, z)` meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour2D {
    pub vertices: Vec<[f64; 2]>,
    pub closed: bool,
}

impl Contour2D {
    pub fn closed(vertices: Vec<[f64; 2]>) -> Self {
        Self {
            vertices,
            closed: true,
        }
    }
}

/// A tracked contour over a set of frames of one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourSeries {
    pub chamber: Chamber,
    pub layer: Layer,
    pub view: View,
    /// Index of the annotated stream within its recording.
    pub stream: u32,
    /// Annotated frame indices of that stream; same length as `frames`.
    pub frame_indices: Vec<u32>,
    pub frames: Vec<Contour2D>,
}

/// Closed triangle surface, vertices in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh3D {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshSeries {
    pub chamber: Chamber,
    pub stream: u32,
    pub frame_indices: Vec<u32>,
    pub frames: Vec<Mesh3D>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKind {
    Point,
    Line,
    SampleVolume,
}

/// Coordinate frame of marker coordinates. Recorded explicitly because
/// marker placement can refer to either representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateFrame {
    Beamspace,
    Cartesian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMarker {
    pub kind: MarkerKind,
    pub frame: CoordinateFrame,
    pub coords: Vec<f64>,
    pub label: String,
    pub stream: u32,
    pub frame_index: Option<u32>,
}

impl SparseMarker {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.coords.is_empty() || self.coords.iter().any(|c| !c.is_finite()) {
            return Err(AnnotationError::Invalid(format!(
                "marker {:?} has non-finite or empty coordinates",
                self.label
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    pub contours: Vec<ContourSeries>,
    pub meshes: Vec<MeshSeries>,
    pub markers: Vec<SparseMarker>,
}

impl AnnotationSet {
    pub fn is_empty(&self) -> bool {
        self.contours.is_empty() && self.meshes.is_empty() && self.markers.is_empty()
    }
}

/// CSV with `frame,time_s,value` rows.
pub fn curve_csv(times: &[f64], values: &[f64]) -> String {
    let mut s = String::from("frame,time_s,value\n");
    for (i, (t, v)) in times.iter().zip(values).enumerate() {
        s.push_str(&format!("{i},{t},{v}\n"));
    }
    s
}
