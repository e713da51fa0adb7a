use histocad_core::{ClassLabel, NUM_CLASSES};

pub const PALETTE_VERSION: u32 = 1;

/// One color per class in canonical order: the Okabe-Ito set without black,
/// completed with indigo, wine, olive and grey from Tol's schemes.
pub const PALETTE: [[u8; 3]; NUM_CLASSES] = [
    [230, 159, 0],
    [86, 180, 233],
    [0, 158, 115],
    [240, 228, 66],
    [0, 114, 178],
    [213, 94, 0],
    [204, 121, 167],
    [51, 34, 136],
    [136, 34, 85],
    [153, 153, 51],
    [187, 187, 187],
];

pub fn class_color(label: ClassLabel) -> [u8; 3] {
    PALETTE[label.index()]
}

/// Heatmap color scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Colormap {
    #[default]
    Grayscale,
    /// Piecewise-linear approximation of the inferno scale.
    Inferno,
}

const INFERNO_STOPS: [[u8; 3]; 5] = [[0, 0, 4], [87, 16, 110], [188, 55, 84], [249, 142, 9], [252, 255, 164]];

impl Colormap {
    pub fn color(self, intensity: u8) -> [u8; 3] {
        match self {
            Colormap::Grayscale => [intensity; 3],
            Colormap::Inferno => {
                let t = intensity as f64 / 255.0 * (INFERNO_STOPS.len() - 1) as f64;
                let i = (t.floor() as usize).min(INFERNO_STOPS.len() - 2);
                let f = t - i as f64;
                let (a, b) = (INFERNO_STOPS[i], INFERNO_STOPS[i + 1]);
                std::array::from_fn(|c| (a[c] as f64 + (b[c] as f64 - a[c] as f64) * f).round() as u8)
            }
        }
    }
}

/// `round(255 p)` with halves rounded up; `p` is clamped to `[0, 1]`.
pub fn probability_intensity(p: f64) -> u8 {
    (255.0 * p.clamp(0.0, 1.0) + 0.5).floor() as u8
}
