"""Road network representation learning with region hypergraphs.

Pipeline: load a road network (roads are nodes), extract block faces into a
hypergraph, pretrain position-aware dual-channel embeddings with graph and
hypergraph pretext losses, then probe the embeddings on downstream labels.
"""

__version__ = "0.1.0"
