"""treegate: layerwise learning of tree-structured Boolean circuits.

The library has three strands: exact circuit and distribution machinery
(`circuit`, `dist`), the layerwise trainer with its matching deep network
(`net`, `train`), and supporting experiments (`baseline` dense-net control,
`analysis` rank bounds and the verification suite).  `cli` ties them to
the `treegate` command.
"""

__version__ = "0.1.0"
