// Geometry probe: visible elements with positional xpaths and page-space
// border-box rectangles. Parents always precede children.
return (function () {
  var out = [];
  var sx = window.scrollX || window.pageXOffset || 0;
  var sy = window.scrollY || window.pageYOffset || 0;

  function step(el) {
    var tag = el.tagName.toLowerCase();
    if (el === document.documentElement || el === document.body) {
      return tag;
    }
    var n = 1;
    for (var s = el.previousElementSibling; s; s = s.previousElementSibling) {
      if (s.tagName === el.tagName) n++;
    }
    return tag + "[" + n + "]";
  }

  function walk(el, path, parentIndex) {
    var style = window.getComputedStyle(el);
    if (style.display === "none") return;
    var r = el.getBoundingClientRect();
    var idx = parentIndex;
    if (r.width * r.height > 0) {
      idx = out.length;
      out.push({
        xpath: path,
        rect: { x: r.left + sx, y: r.top + sy, width: r.width, height: r.height },
        parent_index: parentIndex
      });
    }
    for (var c = el.firstElementChild; c; c = c.nextElementSibling) {
      walk(c, path + "/" + step(c), idx);
    }
  }

  walk(document.documentElement, "/html", -1);
  return {
    elements: out,
    viewport: { width: window.innerWidth, height: window.innerHeight }
  };
})();
