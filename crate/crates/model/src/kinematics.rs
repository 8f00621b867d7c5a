//! Differentiable skeleton math on tensors: 6-D rotation decoding, bone
//! offsets from shape, forward kinematics and head-anchored placement.

use candle_core::{DType, Device, Result, Tensor, D};
use hamos_core::skeleton::{joint, KinematicTree, NUM_JOINTS, SHAPE_DIM, SHAPE_LIMIT};

const NORM_EPS: f64 = 1e-12;

fn normalize(v: &Tensor) -> Result<Tensor> {
    let n = (v.sqr()?.sum_keepdim(D::Minus1)? + NORM_EPS)?.sqrt()?;
    v.broadcast_div(&n)
}

fn cross(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let c = |t: &Tensor, i: usize| t.narrow(D::Minus1, i, 1);
    let (a0, a1, a2) = (c(a, 0)?, c(a, 1)?, c(a, 2)?);
    let (b0, b1, b2) = (c(b, 0)?, c(b, 1)?, c(b, 2)?);
    Tensor::cat(
        &[
            ((&a1 * &b2)? - (&a2 * &b1)?)?,
            ((&a2 * &b0)? - (&a0 * &b2)?)?,
            ((&a0 * &b1)? - (&a1 * &b0)?)?,
        ],
        D::Minus1,
    )
}

/// `(..., 6)` first-two-column encodings to `(..., 3, 3)` rotation matrices
/// by Gram-Schmidt.
pub fn rot6d_to_matrix(x: &Tensor) -> Result<Tensor> {
    let a = x.narrow(D::Minus1, 0, 3)?;
    let b = x.narrow(D::Minus1, 3, 3)?;
    let e1 = normalize(&a)?;
    let proj = (&e1 * &b)?.sum_keepdim(D::Minus1)?;
    let e2 = normalize(&(b - e1.broadcast_mul(&proj)?)?)?;
    let e3 = cross(&e1, &e2)?;
    Tensor::cat(&[e1.unsqueeze(D::Minus1)?, e2.unsqueeze(D::Minus1)?, e3.unsqueeze(D::Minus1)?], D::Minus1)
}

/// Skeleton constants as tensors.
#[derive(Debug, Clone)]
pub struct BodyModel {
    parents: Vec<Option<usize>>,
    /// `(22, 3)` unit rest directions.
    directions: Tensor,
    /// `(22,)`
    base_lengths: Tensor,
    /// `(16, 22)` shape basis, transposed.
    basis_t: Tensor,
    /// `(22, 22)` with `[j][k] = 1` when bone `k` lies on the path to `j`.
    ancestors: Tensor,
}

impl BodyModel {
    pub fn new(tree: &KinematicTree, dtype: DType, device: &Device) -> Result<Self> {
        let n = tree.num_joints();
        let dirs: Vec<f64> = tree.rest_directions.iter().flatten().copied().collect();
        let mut basis_t = vec![0.0; SHAPE_DIM * n];
        for (j, row) in tree.shape_basis.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                basis_t[k * n + j] = *v;
            }
        }
        let mut anc = vec![0.0; n * n];
        for j in 0..n {
            let mut k = Some(j);
            while let Some(i) = k {
                if tree.parents[i].is_some() {
                    anc[j * n + i] = 1.0;
                }
                k = tree.parents[i];
            }
        }
        let t = |v: Vec<f64>, shape: &[usize]| Tensor::from_vec(v, shape, device)?.to_dtype(dtype);
        Ok(Self {
            parents: tree.parents.clone(),
            directions: t(dirs, &[n, 3])?,
            base_lengths: t(tree.base_lengths.clone(), &[n])?,
            basis_t: t(basis_t, &[SHAPE_DIM, n])?,
            ancestors: t(anc, &[n, n])?,
        })
    }

    /// `(B, 16)` shapes, clamped to the valid box, to `(B, 22, 3)` offsets.
    pub fn bone_offsets(&self, shape: &Tensor) -> Result<Tensor> {
        let beta = shape.clamp(-SHAPE_LIMIT, SHAPE_LIMIT)?;
        let lengths = beta.matmul(&self.basis_t)?.broadcast_add(&self.base_lengths)?;
        lengths.unsqueeze(2)?.broadcast_mul(&self.directions)
    }

    /// Rest-pose joint positions `(B, 22, 3)` with the root at the origin.
    pub fn tpose_joints(&self, shape: &Tensor) -> Result<Tensor> {
        self.ancestors.broadcast_matmul(&self.bone_offsets(shape)?)
    }

    /// Joint positions `(B, T, 22, 3)` from world root orientations
    /// `(B, T, 3, 3)`, local joint rotations `(B, T, 21, 3, 3)`, offsets
    /// `(B, 22, 3)` and root translations `(B, T, 3)`.
    pub fn forward_kinematics(&self, root_rot: &Tensor, local: &Tensor, offsets: &Tensor, root_t: &Tensor) -> Result<Tensor> {
        let (b, t, _, _) = root_rot.dims4()?;
        let bt = b * t;
        let offsets = offsets
            .unsqueeze(1)?
            .broadcast_as((b, t, NUM_JOINTS, 3))?
            .contiguous()?
            .reshape((bt, NUM_JOINTS, 3))?;
        let local = local.reshape((bt, NUM_JOINTS - 1, 3, 3))?;
        let mut rots: Vec<Tensor> = Vec::with_capacity(NUM_JOINTS);
        let mut pos: Vec<Tensor> = Vec::with_capacity(NUM_JOINTS);
        rots.push(root_rot.reshape((bt, 3, 3))?);
        pos.push(root_t.reshape((bt, 3, 1))?);
        for j in 1..NUM_JOINTS {
            let p = self.parents[j].expect("non-root joint has a parent");
            let off = offsets.narrow(1, j, 1)?.reshape((bt, 3, 1))?;
            pos.push((&pos[p] + rots[p].matmul(&off)?)?);
            let r = local.narrow(1, j - 1, 1)?.squeeze(1)?;
            rots.push(rots[p].matmul(&r)?);
        }
        Tensor::stack(&pos, 1)?.reshape((b, t, NUM_JOINTS, 3))
    }

    /// World joints from canonical pose features `(B, T, 132)`: the root
    /// orientation is `canonical · root_to_cano` and the translation places
    /// the head joint at `head_pos` `(B, T, 3)`.
    pub fn aligned_joints(&self, features: &Tensor, canonical: &Tensor, head_pos: &Tensor, offsets: &Tensor) -> Result<Tensor> {
        let (b, t, _) = features.dims3()?;
        let rots = rot6d_to_matrix(&features.reshape((b, t, NUM_JOINTS, 6))?)?;
        let root = canonical.matmul(&rots.narrow(2, 0, 1)?.squeeze(2)?.contiguous()?)?;
        let local = rots.narrow(2, 1, NUM_JOINTS - 1)?;
        let zeros = Tensor::zeros((b, t, 3), features.dtype(), features.device())?;
        let rel = self.forward_kinematics(&root, &local, offsets, &zeros)?;
        let head = rel.narrow(2, joint::HEAD, 1)?;
        let shift = (head_pos.unsqueeze(2)? - head)?;
        rel.broadcast_add(&shift)
    }
}
