# # A planar wave on an anisotropic sheet
#
# Stimulate the left edge of a 20 mm square and time the wave between two
# probe lines, once with fibres along x and once across them. The diffusion
# tensor is nine times stronger along the fibre, so the speeds differ by
# roughly a factor of three.

from pathlib import Path

from cardiomech.cell import params_for_variant
from cardiomech.ep import D_CROSS, D_FIBRE_CONTROL, DiffusionTensor, EpField, StimulusSpec, left_face, measure_cv
from cardiomech.mesh import generate_square_mesh
from cardiomech.snapshots import rasterize, write_pgm

out = Path("demo_out")
out.mkdir(exist_ok=True)

mesh = generate_square_mesh(20.0, 0.3, seed=0)
print(f"{mesh.n_nodes} nodes, {mesh.n_triangles} triangles")

cv = {}
for name, fibre, duration in (("fibre", (1.0, 0.0), 45.0), ("cross", (0.0, 1.0), 90.0)):
    ep = EpField(mesh, params_for_variant("control-1.1"), DiffusionTensor(D_FIBRE_CONTROL, D_CROSS, fibre))
    ep.run(duration, [StimulusSpec(left_face(1.0))])
    cv[name] = measure_cv(ep.X, ep.first_activation, (1, 0), 5.0, 15.0, band=0.3, lateral=(5.0, 15.0))
    print(f"{name:5s} CV {cv[name]:.3f} mm/ms after {ep.stats.steps} steps, "
          f"{sum(ep.stats.gmres_iterations) / ep.stats.steps:.1f} GMRES iterations per step")
    img = rasterize(mesh.points, mesh.triangles, ep.node_values(), (200, 200), (0, 0, 20, 20))
    write_pgm(out / f"planar_{name}.pgm", img)

print(f"anisotropy ratio {cv['fibre'] / cv['cross']:.2f}")
