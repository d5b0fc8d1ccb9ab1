//! Deform-then-render composition shared by the trainer, the cross-frame
//! loss, and evaluation.

use crate::deform::{apply_delta, deform_eval, DeformEval};
use crate::error::Result;
use crate::gaussian::GaussianParams;
use crate::image::Image;
use crate::parallel;
use crate::partition::{ActiveMember, Cloud, NetworkRegistry};
use crate::render::{render_params, OrthoCamera, RenderOptions};
use crate::Vec3;

/// One member of an active set, deformed to some evaluation time.
/// Static members pass their raw parameters through (`eval` is None).
#[derive(Debug, Clone)]
pub struct DeformedMember {
    pub member: ActiveMember,
    pub params: GaussianParams,
    pub eval: Option<DeformEval>,
}

/// Deform every member of an active set at `t_eval`, which for the
/// cross-frame loss may lie outside a member's own segment: the segment's
/// networks are simply evaluated at the requested time.
pub fn deform_members(
    cloud: &Cloud,
    nets: &NetworkRegistry,
    members: &[ActiveMember],
    t_eval: u32,
) -> Result<Vec<DeformedMember>> {
    let results = parallel::map_indexed(members.len(), |k| {
        let m = members[k];
        let inst = &cloud.instances[m.index];
        match m.network_id {
            None => Ok(DeformedMember {
                member: m,
                params: inst.params.clone(),
                eval: None,
            }),
            Some(net_id) => {
                let field = nets.get(net_id);
                let eval = deform_eval(field, &inst.embedding, t_eval as f64)?;
                Ok(DeformedMember {
                    member: m,
                    params: apply_delta(&inst.params, &eval.delta),
                    eval: Some(eval),
                })
            }
        }
    });
    results.into_iter().collect()
}

/// Render an already-deformed member list.
pub fn render_deformed(
    deformed: &[DeformedMember],
    cam: &OrthoCamera,
    background: Vec3,
    opts: &RenderOptions,
) -> Result<Image> {
    let params: Vec<GaussianParams> = deformed.iter().map(|d| d.params.clone()).collect();
    render_params(&params, cam, background, opts)
}

/// Deform an active set at `t_eval` and render it.
pub fn render_members_at(
    cloud: &Cloud,
    nets: &NetworkRegistry,
    members: &[ActiveMember],
    t_eval: u32,
    cam: &OrthoCamera,
    background: Vec3,
    opts: &RenderOptions,
) -> Result<Image> {
    let deformed = deform_members(cloud, nets, members, t_eval)?;
    render_deformed(&deformed, cam, background, opts)
}
