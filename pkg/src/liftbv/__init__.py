"""liftbv: universal-cover liftings of manifold-valued BV fields.

Subpackages follow the pipeline stages: `polygeom` (polyhedra and
triangulations), `covers` (covering-space targets and deck groups),
`scaffold` (retraction scaffolds), `transversal` (generic shifts and
singular sets), `liftcore` (the lifting engine), `fieldcli` (I/O and
the end-to-end pipeline).
"""

__version__ = "0.1.0"

from . import errors  # noqa: F401
