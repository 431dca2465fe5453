//! Street-tree data integration: geodesy, spatial indexing, dataset ingest,
//! enrichment, regional aggregation and regression.

pub mod aggregate;
pub mod enrich;
pub mod geo;
pub mod index;
pub mod ingest;
pub mod par;
pub mod pipeline;
pub mod stats;

pub use geo::{haversine_distance, point_in_polygon, BoundingBox, GeoError, GeoPoint, Polygon};
pub use index::{IndexError, Neighbor, PointIndex};
pub use par::Parallelism;
