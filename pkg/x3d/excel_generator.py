"""
Excel workbook generator for run reports
"""

from io import BytesIO

from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill

HEADER_COLORS = {
    'Summary': '4472C4',
    'Epochs': '70AD47',
    'GAP': 'FFC000',
    'Robustness': 'ED7D31',
    'Probes': '7030A0',
}


class ReportWorkbook:

    @staticmethod
    def generate_excel(report):
        """
        Build an xlsx workbook from a RunReport (or its dict form)

        Args:
            report: RunReport or dict

        Returns:
            BytesIO object containing the Excel file
        """
        data = report.to_dict() if hasattr(report, 'to_dict') else dict(report)
        wb = Workbook()
        ReportWorkbook._summary_sheet(wb.active, data)
        ReportWorkbook._epochs_sheet(wb.create_sheet('Epochs'), data)
        ReportWorkbook._gap_sheet(wb.create_sheet('GAP'), data)
        ReportWorkbook._robustness_sheet(wb.create_sheet('Robustness'), data)
        ReportWorkbook._probes_sheet(wb.create_sheet('Probes'), data)

        excel_file = BytesIO()
        wb.save(excel_file)
        excel_file.seek(0)
        return excel_file

    @staticmethod
    def save(report, path):
        with open(path, 'wb') as handle:
            handle.write(ReportWorkbook.generate_excel(report).getvalue())

    @staticmethod
    def _header(ws, headers):
        ws.append(headers)
        color = HEADER_COLORS.get(ws.title, '4472C4')
        for cell in ws[1]:
            cell.font = Font(bold=True, color="FFFFFF")
            cell.fill = PatternFill(start_color=color, end_color=color, fill_type="solid")
            cell.alignment = Alignment(horizontal='center')

    @staticmethod
    def _fit_columns(ws):
        for column in ws.columns:
            cells = list(column)
            width = max(len(str(cell.value)) if cell.value is not None else 0 for cell in cells)
            ws.column_dimensions[cells[0].column_letter].width = width + 2

    @staticmethod
    def _summary_sheet(ws, data):
        ws.title = 'Summary'
        ReportWorkbook._header(ws, ['Metric', 'Value'])
        ws.append(['Seed', data.get('seed')])
        ws.append(['Accuracy', data.get('accuracy')])
        ws.append(['Mean class accuracy', data.get('mean_class_accuracy')])
        for name, value in (data.get('per_class_accuracy') or {}).items():
            ws.append([f"Accuracy ({name})", value])
        ws.append(['Wall clock (s)', round(data.get('wall_clock') or 0.0, 3)])
        model = (data.get('config') or {}).get('model', {})
        for key in ('block', 'es_kind', 'es_usage', 'denoise', 'ncp', 'k', 'channels'):
            if key in model:
                ws.append([f"model.{key}", str(model[key])])
        for flag, row in ((data.get('ablation') or {}).get('disabled') or {}).items():
            ws.append([f"Accuracy without {flag}", row['accuracy']])
            ws.append([f"Delta from {flag}", row['delta']])
        for note in data.get('notes') or []:
            ws.append(['Note', note])
        ReportWorkbook._fit_columns(ws)

    @staticmethod
    def _epochs_sheet(ws, data):
        ReportWorkbook._header(ws, ['Epoch', 'Loss', 'Learning rate', 'Train accuracy'])
        for row in data.get('epochs') or []:
            ws.append([row['epoch'] + 1, row['loss'], row['lr'], row['train_accuracy']])
        ReportWorkbook._fit_columns(ws)

    @staticmethod
    def _gap_sheet(ws, data):
        ReportWorkbook._header(ws, ['Layer', 'GAP', 'Regions', 'Skipped'])
        gap = data.get('gap') or {}
        for row in gap.get('per_layer', []):
            ws.append([row['layer'], row['gap'], row['regions'], row['skipped']])
        ReportWorkbook._fit_columns(ws)

    @staticmethod
    def _robustness_sheet(ws, data):
        ReportWorkbook._header(ws, ['Transform', 'Accuracy', 'Drop'])
        robustness = data.get('robustness') or {}
        if robustness:
            ws.append(['vanilla', robustness['vanilla'], 0.0])
        for label, row in robustness.get('transforms', {}).items():
            ws.append([label, row['accuracy'], row['drop']])
        ReportWorkbook._fit_columns(ws)

    @staticmethod
    def _probes_sheet(ws, data):
        ReportWorkbook._header(ws, ['Task', 'Metric', 'Value', 'Train size', 'Test size'])
        for row in data.get('probes') or []:
            ws.append([row['task'], row['metric'], row['value'], row['train_size'], row['test_size']])
        ReportWorkbook._fit_columns(ws)
