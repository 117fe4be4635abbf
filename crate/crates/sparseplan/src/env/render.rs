use crate::env::sim::{EnvConfig, EnvState};

/// G x G grayscale image, row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub size: usize,
    pub pixels: Vec<f64>,
}

impl Frame {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size + col]
    }
}

/// Deterministic renderer: wall column with the door gap zeroed, agent
/// as a filled disc with an exponential halo. The halo keeps the pixel
/// distance between two renders informative even when the discs do not
/// overlap, which the latent planning objective relies on.
pub fn render(cfg: &EnvConfig, s: &EnvState) -> Frame {
    let g = cfg.frame_size;
    let mut pixels = vec![0.0; g * g];
    let wall_col = ((cfg.wall_x * g as f64) as usize).min(g - 1);
    for row in 0..g {
        let yc = (row as f64 + 0.5) / g as f64;
        if !(yc > cfg.gap_lo && yc < cfg.gap_hi) {
            pixels[row * g + wall_col] = 1.0;
        }
    }
    let ax = s.x * g as f64;
    let ay = s.y * g as f64;
    for row in 0..g {
        for col in 0..g {
            let dx = col as f64 + 0.5 - ax;
            let dy = row as f64 + 0.5 - ay;
            let d = (dx * dx + dy * dy).sqrt();
            let v = if d <= cfg.agent_radius_px {
                1.0
            } else {
                (-(d - cfg.agent_radius_px) / cfg.agent_halo_px).exp()
            };
            let idx = row * g + col;
            if v > pixels[idx] {
                pixels[idx] = v;
            }
        }
    }
    Frame { size: g, pixels }
}
