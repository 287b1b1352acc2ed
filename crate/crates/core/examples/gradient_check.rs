//! Analytic gradients of both losses checked against central differences,
//! then a few plain gradient steps on the FA loss.

use fadag::grad::fa_loss_grad;
use fadag::{finite_diff_check, random_lattice, LossKind, Reference};

fn main() -> fadag::Result<()> {
    let mut params = random_lattice(8, 5, 3)?;
    let y = Reference::parse("0,2,1")?;
    for which in [LossKind::Fa, LossKind::Nll] {
        print!("{}", finite_diff_check(&params, &y, 2, which)?);
    }

    for step in 0..=50 {
        let g = fa_loss_grad(&params, &y, 2)?;
        if step % 10 == 0 {
            println!("step {step:>2}: FA loss {:.6}", g.loss_value);
        }
        for k in 0..params.num_params() {
            *params.param_mut(k) -= 5.0 * g.component(k);
        }
    }
    Ok(())
}
