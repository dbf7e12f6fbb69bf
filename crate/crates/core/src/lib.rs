pub mod checkpoint;
pub mod engine;
pub mod gan3d;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod postproc;
pub mod segmenter;
pub mod volume;
