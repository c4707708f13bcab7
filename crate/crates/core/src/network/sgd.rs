use super::{Gradients, Network};
use crate::error::{Error, Result};

/// Momentum SGD: `v ← μ·v + g`, `θ ← θ − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: None,
        })
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.params().len() {
            return Err(Error::invalid("gradients do not match network"));
        }
        let velocity = self.velocity.get_or_insert_with(|| Gradients::zeros_like(net));
        for ((p, g), v) in net
            .params_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(velocity.layers.iter_mut())
        {
            match (p, g, v) {
                (Some(p), Some(g), Some(v)) => {
                    update(&mut p.weight, &g.weight, &mut v.weight, self.lr, self.momentum)?;
                    update(&mut p.bias, &g.bias, &mut v.bias, self.lr, self.momentum)?;
                }
                (None, None, None) => {}
                _ => return Err(Error::invalid("gradients do not match network")),
            }
        }
        Ok(())
    }
}

fn update(
    param: &mut crate::numerics::Tensor,
    grad: &crate::numerics::Tensor,
    vel: &mut crate::numerics::Tensor,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::ShapeMismatch {
            left: param.shape().to_vec(),
            right: grad.shape().to_vec(),
            context: "sgd step",
        });
    }
    for ((p, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(vel.data_mut().iter_mut())
    {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    if param.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sgd step"));
    }
    Ok(())
}
