//! Synthetic patient sequences, VOC-style annotation files, split
//! protocols, recognition patches and augmentation.

mod augment;
mod frame;
mod label;
mod manifest;
mod patches;
mod split;
mod synth;
mod voc;

pub use augment::{augment_box, augment_frame, augment_image, AugmentConfig, Augmentation};
pub use frame::{image_to_tensor, images_to_tensor, AnnotatedFrame, Object, PatientLabel, PatientSequence};
pub use label::ClassLabel;
pub use manifest::{load_dataset, read_manifest, write_dataset, DatasetManifest, FrameEntry, PatientEntry, DATASET_MANIFEST};
pub use patches::{build_recognition_set, crop_patch, crop_region, split_recognition, PatchConfig, RecognitionSample};
pub use split::{frame_stratum, split_detection, stratified_split, SplitRatio};
pub use synth::{generate_dataset, sample_lesion_box, Recipes, SizeDist, SynthConfig, REFERENCE_SIZE};
pub use voc::{annotation_xml, load_voc, load_voc_frame, parse_annotation, read_annotation, write_voc, write_voc_frame, VocAnnotation, ANNOTATION_DIR, IMAGE_DIR};
