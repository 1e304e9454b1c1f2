use crate::config::{FeatureSource, GraphormerConfig};
use crate::encoder::GrbKind;
use crate::error::Result;
use crate::numerics::{ParamStore, Real};

use super::features::conv_out_size;
use super::model::Geometry;

/// Per-module totals in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Breakdown {
    pub groups: Vec<(String, u64)>,
}

impl Breakdown {
    pub fn total(&self) -> u64 {
        self.groups.iter().map(|(_, n)| n).sum()
    }

    pub fn get(&self, group: &str) -> u64 {
        self.groups.iter().find(|(g, _)| g == group).map_or(0, |(_, n)| *n)
    }

    fn add(&mut self, group: &str, n: u64) {
        match self.groups.iter_mut().find(|(g, _)| g == group) {
            Some((_, total)) => *total += n,
            None => self.groups.push((group.to_string(), n)),
        }
    }
}

/// Module a parameter belongs to, from its name.
pub fn param_group(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts[0] {
        "features" => "feature provider".into(),
        "tokenizer" => "tokenizer".into(),
        "upsampler" => "upsampler".into(),
        "camera" => "camera head".into(),
        "stack" if parts.get(1) == Some(&"head") => "heads".into(),
        "stack" if parts.get(2) == Some(&"tap") => "heads".into(),
        "stack" if parts.get(3).is_some_and(|p| *p == "grb" || *p == "gconv") => "graph modules".into(),
        "stack" => format!("encoder {}", parts.get(1).and_then(|p| p.strip_prefix("enc")).unwrap_or("?")),
        other => other.into(),
    }
}

/// Exact count by walking the store.
pub fn count_params<T: Real>(store: &ParamStore<T>) -> Breakdown {
    let mut b = Breakdown { groups: Vec::new() };
    for p in store.iter() {
        b.add(&param_group(&p.name), p.value.numel() as u64);
    }
    b
}

/// Closed-form multiply-add count of one forward pass. Graph products are
/// charged at the number of nonzeros of Ā.
pub fn flops_estimate(config: &GraphormerConfig) -> Result<Breakdown> {
    config.validate()?;
    let geo = Geometry::new(config)?;
    let m = &config.model;
    let n = geo.layout.total() as u64;
    let nnz = geo.adjacency.nnz() as u64;
    let (vc, vf) = (geo.layout.vertices as u64, geo.template.num_fine() as u64);
    let mut b = Breakdown { groups: Vec::new() };

    if m.features == FeatureSource::Conv {
        let chans = [1, m.conv_channels[0], m.conv_channels[1], m.grid_channels, m.global_dim];
        let mut size = config.data.image_size;
        for k in 0..4 {
            size = conv_out_size(size, 2);
            let out = (size * size) as u64;
            b.add("feature provider", out * 9 * chans[k] as u64 * chans[k + 1] as u64);
        }
    }
    let td = m.token_dim() as u64;
    if m.grid_features {
        let g2 = (m.grid_size * m.grid_size) as u64;
        b.add("tokenizer", g2 * (m.grid_channels as u64 * td + td * td));
    }
    let spec = m.stack_spec();
    let mut d_in = td;
    for (k, &d) in m.dims.iter().enumerate() {
        let d = d as u64;
        let group = format!("encoder {}", k + 1);
        b.add(&group, n * d_in * d);
        let bspec = spec.block_spec(k);
        let hidden = bspec.mlp_hidden() as u64;
        for _ in 0..m.blocks_per_encoder {
            b.add(&group, 4 * n * d * d + 2 * n * n * d + 2 * n * d * hidden);
            match bspec.graph {
                Some((GrbKind::ResidualBlock, _)) => {
                    let h = d / 2;
                    b.add("graph modules", n * d * h + nnz * h + n * h * h + n * h * d);
                }
                Some((GrbKind::BasicConv, _)) => b.add("graph modules", nnz * d + n * d * d),
                Some((GrbKind::MlpEquivalent, _)) | None => {}
            }
        }
        if k + 1 < m.dims.len() {
            b.add("heads", vc * d * 3);
        }
        d_in = d;
    }
    b.add("heads", n * d_in * 3);
    b.add("camera head", d_in * 3);
    b.add("upsampler", vf * vc * 3);
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_from_names() {
        assert_eq!(param_group("features.conv1.w"), "feature provider");
        assert_eq!(param_group("stack.enc2.block1.attn.wq"), "encoder 2");
        assert_eq!(param_group("stack.enc3.block4.grb.ln_a.gamma"), "graph modules");
        assert_eq!(param_group("stack.enc1.block1.gconv.w_g"), "graph modules");
        assert_eq!(param_group("stack.enc1.tap.w"), "heads");
        assert_eq!(param_group("stack.head.b"), "heads");
        assert_eq!(param_group("camera.w"), "camera head");
    }
}
