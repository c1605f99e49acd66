from hypothesis import strategies as st

from posterloop.geometry import BBox, Element, ElementType, Layout


@st.composite
def grid_boxes(draw, den: int = 64):
    """Valid boxes whose edges lie on a 1/den grid."""
    w = draw(st.integers(1, den))
    h = draw(st.integers(1, den))
    x = draw(st.integers(0, den - w))
    y = draw(st.integers(0, den - h))
    return BBox(x / den, y / den, w / den, h / den)


@st.composite
def grid_layouts(draw, max_elements: int = 6, den: int = 64, canvas=(640, 640)):
    n = draw(st.integers(0, max_elements))
    kinds = draw(st.lists(st.sampled_from(list(ElementType)), min_size=n, max_size=n))
    boxes = draw(st.lists(grid_boxes(den), min_size=n, max_size=n))
    # underlays first so the layout validates without warnings
    order = sorted(range(n), key=lambda i: kinds[i] is not ElementType.UNDERLAY)
    elements = tuple(Element(f"e{i}", kinds[i], boxes[i]) for i in order)
    return Layout(canvas[0], canvas[1], elements)


def float_boxes():
    return st.builds(
        lambda x, y, w, h: BBox(x * (1 - w), y * (1 - h), w, h),
        st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 1), st.floats(0.01, 1),
    )
