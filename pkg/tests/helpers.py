import math

import numpy as np

from spinesim.tree import MarkedTree, NodeRecord


def handmade_tree(spine=(True, True, False)):
    """Root on [0, 1] splits in two; child 1 lives to the horizon 2, child 2 dies childless at 1.5."""
    recs = [
        NodeRecord((), 0.0, 1.0, 2, np.array([(0.0, 0.0, 0), (0.5, 0.3, 0), (1.0, 0.5, 1)]), None, spine[0]),
        NodeRecord((1,), 1.0, math.inf, None, np.array([(1.0, 0.5, 1), (1.5, 0.2, 0), (2.0, -0.4, 0)]), (),
                   spine[1]),
        NodeRecord((2,), 1.0, 1.5, 0, np.array([(1.0, 0.5, 1), (1.5, 1.1, 1)]), (), spine[2]),
    ]
    return MarkedTree.from_records(recs, horizon=2.0, root_state=(0.0, 0), observation_times=(0.5, 1.5, 2.0))
