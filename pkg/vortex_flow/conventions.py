"""Sign and normalization conventions shared by every module.

The sheet text is hashed into every summary.json so that stored runs can be
matched to the conventions they were produced under.
"""

import hashlib

CONVENTION_SHEET = """\
vortex-flow convention sheet, revision 2

coordinates   real axes ordered x1, y1, x2, y2; z_j = x_j + i y_j
kahler form   omega = sum_j dx_j ^ dy_j, flat metric, volume L^{2m}
lambda        (Lambda F) = sum_j F_{x_j y_j}
types         alpha^{1,0} = (1/2)(alpha_x - i alpha_y) dz for each pair (x_j, y_j)
laplacian     Delta = d^* d on functions (non-negative); the metric flow uses
              Delta_h u = -i (Lambda F_{exp(u)} - Lambda F_0), the change of the
              site-centred curvature under the rank-1 action of exp(u)
connection    d_A = d + A with A anti-Hermitian; F_A = dA + A ^ A
link coupling D_mu phi = (T_mu phi - phi) / h + A_mu (phi + T_mu phi) / 2
twist         't Hooft, applied on the x1 wrap: phi(x + L e_x1) =
              exp(2 pi i d y1 / L) phi(x)
background    A_bg,y1 = -(2 pi i d x1 / L^2) I
moment map    Psi = Lambda F - (i/2)(phi phi^* - tau I)
energy        ymh = ||F||^2 + ||d_A phi||^2 + (1/4)||phi phi^* - tau I||^2
identity      ymh = ||Psi||^2 + 4||F^{0,2}||^2 + 2||dbar_A phi||^2
              + 2 pi tau C_1 - 8 pi^2 Ch_2
flow          dA/dt = -(d_A^* F + J), dphi/dt = -d_A^* d_A phi
              + (1/2) phi (tau - |phi|^2); this is -1/2 the L^2 gradient
current       J_mu = anti-Hermitian part of D_mu phi (x) mean(phi)^*
metric flow   du/dt = Delta_h u - i Lambda F_0 - (1/2)(|phi_0|^2 e^{2u} - tau)
              with H = e^{2u} H_0 and reconstructed pair e^u . (A_0, phi_0)
gauge action  unitary g conjugates Cayley links V = (1 - hA/2)^{-1}(1 + hA/2);
              rank-1 g = e^{u + i theta}: a -> a + i J du, phi -> e^u phi
"""

CONVENTION_HASH = hashlib.sha256(CONVENTION_SHEET.encode("utf-8")).hexdigest()
