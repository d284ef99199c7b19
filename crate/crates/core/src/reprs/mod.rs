//! Built-in representation kinds.
//!
//! | kind                | output                          | deps                         |
//! |---------------------|---------------------------------|------------------------------|
//! | `color/rgb`         | u8 × 3, frames unchanged        | none                         |
//! | `color/hsv`         | f32 × 3 in [0, 1]               | none                         |
//! | `edges/canny`       | u8 × 1 in {0, 255}              | none                         |
//! | `depth/stub`        | f32 × 1 in [0, 1]               | none                         |
//! | `normals/svd`       | f32 × 3, `(n + 1) / 2`          | one depth map                |
//! | `semantic/stub`     | u8 × 1 class index (hue bins)   | none                         |
//! | `semantic/mapping`  | u8 × 1 class index              | one class map                |
//! | `binary/threshold`  | u8 × 1 in {0, 1}                | channels named by the rule   |
//! | `expert/subprocess` | declared by params              | none (receives RGB)          |

pub mod canny;
pub mod color;
pub mod depth;
pub mod expert;
pub mod expr;
pub mod mask;
pub mod normals;
pub mod protocol;
pub mod semantic;

use crate::representation::Registry;

pub fn register_builtins(registry: &mut Registry) {
    registry
        .register("color/rgb", color::Rgb::from_spec)
        .register("color/hsv", color::Hsv::from_spec)
        .register("edges/canny", canny::Canny::from_spec)
        .register("depth/stub", depth::DepthStub::from_spec)
        .register("normals/svd", normals::SvdNormals::from_spec)
        .register("semantic/stub", semantic::HueBins::from_spec)
        .register("semantic/mapping", semantic::SemanticMapping::from_spec)
        .register("binary/threshold", mask::ThresholdMask::from_spec)
        .register("expert/subprocess", expert::SubprocessExpert::from_spec);
}
