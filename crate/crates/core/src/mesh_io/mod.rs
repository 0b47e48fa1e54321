//! Surface extraction, mesh and image formats, and the synthetic scene generator.

mod image;
mod mc_tables;
mod mesh;
mod scene;

pub use image::{
    bilinear_taps, load_labels, load_mask, load_orientation, load_rgb, save_gray, save_labels,
    save_mask, save_orientation, save_rgb, GrayImage, Image, LabelMap, Mask, RgbImage,
};
pub use mesh::{export_obj, import_obj, marching_cubes, sample_grid, TriangleMesh, VoxelGrid};
pub use scene::{
    build_synthetic_scene, generate_synthetic_scene, is_face_label, load_scene, write_scene,
    LoadedScene, SceneConfig, SceneManifest, SceneShape, SceneView, SyntheticHead, SyntheticScene,
    ViewFiles, LABEL_BACKGROUND, LABEL_EYEBROWS, LABEL_EYES, LABEL_FACE, LABEL_HAIR, LABEL_LIPS,
    LABEL_NOSE, MANIFEST_FILE,
};
